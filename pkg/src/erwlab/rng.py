"""Per-replica random streams.

A stream is identified by ``(master_seed, replica)``.  The numpy
``SeedSequence`` spawn-key mechanism derives an independent PCG64 state for
every replica, so replica ``i`` is the same walk no matter which worker runs
it or in what order.
"""

from __future__ import annotations

import numpy as np

from erwlab._kernels import DIGIT_LIMIT, TWO53

SEED_MASK = (1 << 64) - 1


def make_generator(master_seed: int, replica: int) -> np.random.Generator:
    if replica < 0:
        raise ValueError("replica index must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(master_seed) & SEED_MASK,
                                spawn_key=(int(replica),))
    return np.random.Generator(np.random.PCG64(ss))


class RngStream:
    """Uniform digits in ``[0, 60)`` plus plain uniforms, from one generator.

    ``digit()`` follows the compiled kernels' protocol exactly: eight base-60
    digits per accepted 53-bit draw, least significant first.  A Python walk
    and a compiled walk fed streams with the same identity therefore make
    the same moves.
    """

    __slots__ = ("seed", "replica", "generator", "_digits", "_left")

    def __init__(self, seed: int, replica: int = 0):
        self.seed = int(seed) & SEED_MASK
        self.replica = int(replica)
        self.generator = make_generator(self.seed, self.replica)
        self._digits = 0
        self._left = 0

    def digit(self) -> int:
        if self._left == 0:
            g = self.generator
            while True:
                k = int(g.random() * TWO53)
                if k < DIGIT_LIMIT:
                    break
            self._digits = k
            self._left = 8
        d = self._digits % 60
        self._digits //= 60
        self._left -= 1
        return d

    def uniform(self) -> float:
        return self.generator.random()

    def buffered(self) -> tuple[int, int]:
        """(pending digits, count), handed to a kernel to continue the stream."""
        return self._digits, self._left

    def restore(self, digits: int, left: int) -> None:
        self._digits = int(digits)
        self._left = int(left)


class ForcedStream:
    """Replays a fixed list of digits (and uniforms); for hand-built fixtures."""

    def __init__(self, digits, uniforms=()):
        self._digits = list(digits)
        self._uniforms = list(uniforms)

    def digit(self) -> int:
        if not self._digits:
            raise IndexError("forced digit stream exhausted")
        return self._digits.pop(0)

    def uniform(self) -> float:
        if not self._uniforms:
            raise IndexError("forced uniform stream exhausted")
        return self._uniforms.pop(0)

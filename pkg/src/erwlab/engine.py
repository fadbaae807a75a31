"""Drivers for the compiled walk kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from erwlab import _kernels as K
from erwlab.lattice import ORIGIN, ColumnStore, Site, as_site
from erwlab.rng import RngStream

FIXED_STATS = ("N", "DF", "F", "z", "N_new", "M5", "l")


def stat_names(targets) -> tuple[str, ...]:
    names = []
    for v in targets:
        v = as_site(v)
        names.append("V" if v == ORIGIN else f"V@{v.x}_{v.y}_{v.z}")
    return tuple(names) + FIXED_STATS


@dataclass
class KernelWalk:
    """Checkpoint table of one compiled walk.

    ``table[k]`` holds the statistics at ``horizons[k]`` in ``names`` order.
    ``first_hit``/``window_visits`` are per target (-1 / 0 when unused).
    """

    horizons: np.ndarray
    names: tuple[str, ...]
    table: np.ndarray
    position: Site
    first_hit: np.ndarray
    window_visits: np.ndarray
    store: object

    def column(self, name: str) -> np.ndarray:
        return self.table[:, self.names.index(name)]


class DriftSet:
    """Open-addressing set of packed sites used by the drift kernel."""

    def __init__(self, capacity: int = 1024):
        cap = 1
        while cap < capacity:
            cap <<= 1
        self.keys = np.full(cap, K.EMPTY, dtype=np.int64)
        self.meta = np.zeros(1, dtype=np.int64)

    def grow(self) -> None:
        keys = np.full(self.keys.shape[0] * 2, K.EMPTY, dtype=np.int64)
        K.set_rehash(self.keys, keys)
        self.keys = keys

    def reset(self) -> None:
        self.keys.fill(K.EMPTY)
        self.meta[0] = 0


def _as_targets(targets) -> np.ndarray:
    arr = np.array([tuple(as_site(v)) for v in targets], dtype=np.int64).reshape(-1, 3)
    if arr.shape[0] == 0:
        raise ValueError("at least one target is required")
    return arr


def kernel_walk(stream: RngStream, horizons, targets=(ORIGIN,), *, mode: str = "erw",
                drift_p: float = 1.0, cylinder_radius: int = 0, window: int = 0,
                store=None, start=ORIGIN) -> KernelWalk:
    """Run one walk through the compiled kernel, recording checkpoints.

    ``store`` may be a (possibly pre-populated) ``ColumnStore`` to reuse; it
    is consumed in place.  The stream's buffered digits are continued and
    handed back, so a kernel walk can be interleaved with Python steps.
    """
    hz = np.asarray(horizons, dtype=np.int64)
    if hz.ndim != 1 or hz.size == 0 or hz[0] < 0 or np.any(np.diff(hz) <= 0):
        raise ValueError("horizons must be a nonempty strictly increasing list of t >= 0")
    tg = _as_targets(targets)
    nt = tg.shape[0]
    start = as_site(start)
    state = np.zeros(K.S_TARG + 3 * nt, dtype=np.int64)
    state[K.S_X], state[K.S_Y], state[K.S_Z] = start
    state[K.S_DIG], state[K.S_ND] = stream.buffered()
    state[K.S_CTOUT] = 1
    state[K.S_TARG + nt: K.S_TARG + 2 * nt] = -1
    out = np.zeros((hz.size, nt + K.N_FIXED_OUT), dtype=np.int64)
    g = stream.generator

    if mode == "drift":
        if not 0.0 < drift_p < 1.0:
            raise ValueError("drift mode needs 0 < p < 1")
        if start.z < 0:
            raise ValueError("half-space walk must start with z >= 0")
        dset = store if store is not None else DriftSet()
        while True:
            status = K.drift_kernel(g, state, hz, tg, float(drift_p), dset.keys, dset.meta,
                                    out, K.DIR_TABLE, K.DX, K.DY, K.DZ)
            if status == K.GROW:
                dset.grow()
                continue
            if status == K.OVERFLOW:
                raise OverflowError("drift walk left the packed-key range")
            break
        used = dset
    else:
        if mode not in ("erw", "symmetric"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "erw" and start.z < 0:
            raise ValueError("half-space walk must start with z >= 0")
        cs = store if store is not None else ColumnStore()
        if cs.descent is not None:
            raise ValueError("store has an open descent")
        az = abs(start.z)
        if az > cs.height(start.x, start.y):
            state[K.S_DESC] = az
        kern = K.walk_kernel_sym if mode == "symmetric" else K.walk_kernel_half
        while True:
            status = kern(g, state, hz, tg, int(cylinder_radius), int(window),
                          cs.keys, cs.vals, cs.tiles, cs.meta, out,
                          K.DIR_TABLE, K.DX, K.DY, K.DZ)
            if status == K.GROW:
                cs.grow()
                continue
            if status == K.OVERFLOW:
                raise OverflowError("column height exceeded the store's range")
            break
        used = cs
        desc = int(state[K.S_DESC])
        az = abs(int(state[K.S_Z]))
        if desc > az:
            cs.descent = (int(state[K.S_X]), int(state[K.S_Y]), az + 1, desc)
    stream.restore(state[K.S_DIG], state[K.S_ND])
    return KernelWalk(
        horizons=hz,
        names=stat_names(targets),
        table=out,
        position=Site(int(state[K.S_X]), int(state[K.S_Y]), int(state[K.S_Z])),
        first_hit=state[K.S_TARG + nt: K.S_TARG + 2 * nt].copy(),
        window_visits=state[K.S_TARG + 2 * nt: K.S_TARG + 3 * nt].copy(),
        store=used,
    )

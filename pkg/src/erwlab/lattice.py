"""Half-space lattice, visited-set stores and the reference (pure Python) walk.

The step functions here are deliberately plain: they are the readable
definition the compiled kernels are checked against, and they are what the
coupling transcripts replay.  Both consume random digits through the same
protocol (see ``rng.RngStream``), so a Python walk and a kernel walk fed the
same stream make identical moves.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from erwlab import _kernels as K


class Site(NamedTuple):
    x: int
    y: int
    z: int

    def folded(self) -> "Site":
        return Site(self.x, self.y, abs(self.z))


ORIGIN = Site(0, 0, 0)

# index = direction code used by the kernels
DIRECTIONS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
_DIR_VISITED = tuple(int(v) for v in K.DIR_TABLE[0])
_DIR_FLOOR = tuple(int(v) for v in K.DIR_TABLE[1])
_DIR_MIDDLE = tuple(int(v) for v in K.DIR_TABLE[2])


class StepKind(enum.Enum):
    FLOOR = "floor"
    VISITED = "visited"
    NEW = "new"


def as_site(v) -> Site:
    if isinstance(v, Site):
        return v
    x, y, z = v
    return Site(int(x), int(y), int(z))


# ------------------------------------------------------------------ stores

class NaiveSet:
    """Visited non-floor vertices as an explicit set of sites."""

    def __init__(self, sites: Iterable = ()):
        self._sites: set[Site] = set()
        for s in sites:
            self.add(s)

    def __contains__(self, site) -> bool:
        return site in self._sites

    def add(self, site) -> None:
        site = as_site(site)
        if site.z < 1:
            raise ValueError(f"floor vertex {site} cannot enter the visited set")
        self._sites.add(site)

    def __len__(self) -> int:
        return len(self._sites)

    def __iter__(self) -> Iterator[Site]:
        return iter(self._sites)

    def copy(self) -> "NaiveSet":
        new = NaiveSet()
        new._sites = set(self._sites)
        return new

    def is_downward_closed(self) -> bool:
        return all(s.z == 1 or Site(s.x, s.y, s.z - 1) in self._sites
                   for s in self._sites)


class ColumnStore:
    """Visited set as one interval ``[1, h]`` per column plus one open descent.

    Backed by the tiled hash layout in ``_kernels`` (a few bytes per column).
    A descent through fresh vertices starting above ``h + 1`` is held as a
    detached interval ``[lo, hi]`` and merged into its column once it reaches
    ``h + 1``.  Anything else that would break the interval shape raises
    ``ValueError``; use ``NaiveSet`` for arbitrary configurations.
    """

    def __init__(self, sites: Iterable = (), capacity: int = 16):
        tcap = max(2, int(capacity))
        kcap = 1
        while kcap < 2 * tcap:
            kcap <<= 1
        self.keys = np.full(kcap, K.EMPTY, dtype=np.int64)
        self.vals = np.zeros(kcap, dtype=np.int32)
        self.tiles = np.zeros((tcap, K.TILE_CELLS), dtype=np.uint16)
        self.meta = np.zeros(1, dtype=np.int64)
        self.descent: tuple[int, int, int, int] | None = None
        sites = sorted(as_site(s) for s in sites)
        for s in sites:
            self.add(s)

    # -- capacity
    def grow(self) -> None:
        tcap = self.tiles.shape[0] * 2
        tiles = np.zeros((tcap, K.TILE_CELLS), dtype=np.uint16)
        tiles[: self.tiles.shape[0]] = self.tiles
        kcap = self.keys.shape[0]
        while kcap < 2 * tcap:
            kcap <<= 1
        keys = np.full(kcap, K.EMPTY, dtype=np.int64)
        vals = np.zeros(kcap, dtype=np.int32)
        K.rehash(self.keys, self.vals, keys, vals)
        self.keys, self.vals, self.tiles = keys, vals, tiles

    def _ensure_room(self) -> None:
        while not K.has_room(self.keys, self.tiles, self.meta, 1):
            self.grow()

    def reset(self) -> None:
        self.keys.fill(K.EMPTY)
        self.tiles[: self.meta[0]] = 0
        self.meta[0] = 0
        self.descent = None

    @property
    def nbytes(self) -> int:
        return self.keys.nbytes + self.vals.nbytes + self.tiles.nbytes + self.meta.nbytes

    # -- columns
    def _cell(self, x: int, y: int) -> int:
        return int(K.column_cell(self.keys, self.vals, self.tiles, x, y))

    def height(self, x: int, y: int) -> int:
        return self._cell(x, y) >> 1

    def _set_height(self, x: int, y: int, h: int) -> None:
        if h > K.HMAX:
            raise OverflowError(f"column height {h} exceeds {K.HMAX}")
        self._ensure_room()
        c = self._cell(x, y)
        K.column_set(self.keys, self.vals, self.tiles, self.meta, x, y, (h << 1) | (c & 1))

    def mark_floor(self, x: int, y: int) -> bool:
        """Flag the floor vertex below column (x, y); True if newly flagged."""
        c = self._cell(x, y)
        if c & 1:
            return False
        self._ensure_room()
        K.column_set(self.keys, self.vals, self.tiles, self.meta, x, y, c | 1)
        return True

    def floor_visited(self, x: int, y: int) -> bool:
        return bool(self._cell(x, y) & 1)

    # -- set interface
    def __contains__(self, site) -> bool:
        x, y, z = site
        if z < 1:
            return False
        if z <= self.height(x, y):
            return True
        d = self.descent
        return d is not None and d[0] == x and d[1] == y and d[2] <= z <= d[3]

    def add(self, site) -> None:
        x, y, z = as_site(site)
        if z < 1:
            raise ValueError(f"floor vertex {(x, y, z)} cannot enter the visited set")
        if (x, y, z) in self:
            return
        h = self.height(x, y)
        d = self.descent
        if d is not None:
            if d[0] == x and d[1] == y and z == d[2] - 1:
                if z == h + 1:
                    self.descent = None
                    self._set_height(x, y, d[3])
                else:
                    self.descent = (x, y, z, d[3])
                return
            raise ValueError(
                f"inserting {(x, y, z)} during open descent {d} breaks the column shape")
        if z == h + 1:
            self._set_height(x, y, z)
        else:
            self.descent = (x, y, z, z)

    def __len__(self) -> int:
        n = int(K.total_height(self.tiles, self.meta))
        if self.descent is not None:
            n += self.descent[3] - self.descent[2] + 1
        return n

    def columns(self) -> dict[tuple[int, int], int]:
        rows = K.dump_columns(self.keys, self.vals, self.tiles)
        return {(int(r[0]), int(r[1])): int(r[2]) for r in rows if r[2] > 0}

    def floor_points(self) -> set[tuple[int, int]]:
        rows = K.dump_columns(self.keys, self.vals, self.tiles)
        return {(int(r[0]), int(r[1])) for r in rows if r[3]}

    def __iter__(self) -> Iterator[Site]:
        for (x, y), h in sorted(self.columns().items()):
            for z in range(1, h + 1):
                yield Site(x, y, z)
        if self.descent is not None:
            x, y, lo, hi = self.descent
            for z in range(lo, hi + 1):
                yield Site(x, y, z)

    def is_downward_closed(self) -> bool:
        # every committed column is [1, h] by construction
        return self.descent is None

    def copy(self) -> "ColumnStore":
        new = ColumnStore.__new__(ColumnStore)
        new.keys = self.keys.copy()
        new.vals = self.vals.copy()
        new.tiles = self.tiles.copy()
        new.meta = self.meta.copy()
        new.descent = self.descent
        return new


def make_store(kind: str, sites: Iterable = ()):
    if kind == "column":
        return ColumnStore(sites)
    if kind == "naive":
        return NaiveSet(sites)
    raise ValueError(f"unknown store kind {kind!r}")


# ------------------------------------------------------------ classification

def classify(position, store) -> StepKind:
    x, y, z = position
    if z < 0:
        raise ValueError(f"{tuple(position)} lies below the half-space")
    if z == 0:
        return StepKind.FLOOR
    if position in store:
        return StepKind.VISITED
    return StepKind.NEW


# ------------------------------------------------------------------- walks

@dataclass
class WalkState:
    """Position, visited store and running counters of one walk.

    Counting conventions: ``F``, ``N_new``, ``N`` and ``DF`` count times
    ``u < t``; ``visits(v)`` counts times ``u <= t`` (time 0 included).
    In symmetric mode ``position`` carries a signed z and every counter
    refers to the folded path.
    """

    position: Site
    store: object
    start: Site
    mode: str = "erw"
    drift_p: float = 1.0
    watch: tuple[Site, ...] = (ORIGIN,)
    t: int = 0
    F: int = 0
    N_new: int = 0
    N: int = 0
    DF: int = 0
    initial: frozenset = frozenset()
    _visits: dict = field(default_factory=dict)
    _floor_seen: set = field(default_factory=set)
    _seen_initial: set = field(default_factory=set)

    @classmethod
    def begin(cls, start=ORIGIN, config: Iterable = (), store: str = "column",
              mode: str = "erw", drift_p: float = 1.0, watch=(ORIGIN,)) -> "WalkState":
        start = as_site(start)
        if mode not in ("erw", "symmetric", "drift"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode != "symmetric" and start.z < 0:
            raise ValueError("half-space walk must start with z >= 0")
        if mode == "drift":
            if not 0.0 < drift_p < 1.0:
                raise ValueError("drift mode needs 0 < p < 1")
            if store == "column":
                store = "naive"
        config = [as_site(s) for s in config]
        st = make_store(store, config)
        watch = tuple(as_site(v) for v in watch)
        return cls(position=start, store=st, start=start, mode=mode,
                   drift_p=drift_p if mode == "drift" else 1.0, watch=watch,
                   initial=frozenset(config), _visits={v: 0 for v in watch})

    @property
    def folded(self) -> Site:
        return self.position.folded()

    @property
    def z(self) -> int:
        return abs(self.position.z)

    def kind(self) -> StepKind:
        return classify(self.folded, self.store)

    def visits(self, v=ORIGIN) -> int:
        v = as_site(v)
        return self._visits[v] + (self.folded == v)

    @property
    def martingale(self) -> float:
        return self.z + self.N_new - self.F / 5

    def snapshot(self) -> tuple:
        """Hashable summary used by determinism checks."""
        return (self.position, self.t, self.F, self.N_new, self.N, self.DF,
                tuple(self.visits(v) for v in self.watch), len(self.store))


def _record_departure(state: WalkState, kind: StepKind) -> None:
    fp = state.folded
    if fp in state._visits:
        state._visits[fp] += 1
    if kind is StepKind.FLOOR:
        state.F += 1
        if (fp.x, fp.y) not in state._floor_seen:
            state._floor_seen.add((fp.x, fp.y))
            state.DF += 1
            state.N += 1
    elif kind is StepKind.NEW:
        state.N_new += 1
        state.N += 1
        state.store.add(fp)
    elif fp in state.initial and fp not in state._seen_initial:
        state._seen_initial.add(fp)
        state.N += 1


def apply_move(state: WalkState, kind: StepKind, delta) -> None:
    """Record the departure from the current vertex and move by ``delta``.

    ``kind`` must be the current step kind; the caller chose ``delta``
    according to it (coupling rules pick moves for two walkers at once).
    """
    _record_departure(state, kind)
    x, y, z = state.position
    dx, dy, dz = delta
    state.position = Site(x + dx, y + dy, z + dz)
    state.t += 1


def excited_delta(state: WalkState) -> tuple[int, int, int]:
    return (0, 0, -1 if state.position.z > 0 else 1)


def _advance(state: WalkState, rng) -> StepKind:
    kind = state.kind()
    if kind is StepKind.NEW:
        if state.mode == "drift" and rng.uniform() >= state.drift_p:
            delta = DIRECTIONS[_DIR_VISITED[rng.digit()]]
        else:
            delta = excited_delta(state)
    elif kind is StepKind.VISITED:
        delta = DIRECTIONS[_DIR_VISITED[rng.digit()]]
    elif state.mode == "symmetric":
        delta = DIRECTIONS[_DIR_MIDDLE[rng.digit()]]
    else:
        delta = DIRECTIONS[_DIR_FLOOR[rng.digit()]]
    apply_move(state, kind, delta)
    return kind


def erw_step(state: WalkState, rng) -> WalkState:
    """One step of the half-space walk (or its p < 1 drift variant)."""
    if state.mode == "symmetric":
        raise ValueError("use symmetric_erw_step for a symmetric walk")
    _advance(state, rng)
    return state


def symmetric_erw_step(state: WalkState, rng) -> WalkState:
    """One step of the full-space walk with mirror-symmetric visitation."""
    if state.mode != "symmetric":
        raise ValueError("state was not started in symmetric mode")
    _advance(state, rng)
    return state


def run_path(state: WalkState, rng, steps: int) -> list[Site]:
    """Advance ``steps`` times; returns the positions R(0..steps)."""
    step = symmetric_erw_step if state.mode == "symmetric" else erw_step
    path = [state.position]
    for _ in range(steps):
        step(state, rng)
        path.append(state.position)
    return path


def fold(path: Iterable) -> list[Site]:
    return [Site(x, y, abs(z)) for x, y, z in path]


# -------------------------------------------------------------- legality

@dataclass(frozen=True)
class Legality:
    legal: bool
    reason: str | None = None
    site: Site | None = None

    def __bool__(self) -> bool:
        return self.legal


def is_legal_configuration(config: Iterable, strict: bool = False) -> Legality:
    """Check that ``config`` could be the visited set of some walk.

    Legal means downward-closed and connected.  By default the floor plane
    counts as one connected piece adjoining every column base; with
    ``strict=True`` the configuration must be nearest-neighbour connected on
    its own.  The first violating site (in sorted order) is reported.
    """
    sites = sorted({as_site(s) for s in config})
    members = set(sites)
    for s in sites:
        if s.z < 1:
            return Legality(False, "floor vertex in configuration", s)
    for s in sites:
        if s.z > 1 and Site(s.x, s.y, s.z - 1) not in members:
            return Legality(False, "not downward-closed", s)
    if not sites:
        return Legality(True)

    floor = object()  # virtual node for the floor plane

    def neighbours(s):
        for dx, dy, dz in DIRECTIONS:
            n = Site(s.x + dx, s.y + dy, s.z + dz)
            if n in members:
                yield n
        if not strict and s.z == 1:
            yield floor

    seen = {sites[0]}
    queue = deque([sites[0]])
    while queue:
        s = queue.popleft()
        if s is floor:
            nxt = (b for b in sites if b.z == 1)
        else:
            nxt = neighbours(s)
        for n in nxt:
            if n not in seen:
                seen.add(n)
                queue.append(n)
    for s in sites:
        if s not in seen:
            return Legality(False, "not connected", s)
    return Legality(True)

"""Downward coupling of two half-space walks.

R starts from a visited configuration contained in S's.  Each coupling step
applies one rule:

* same step kind: both make the same move (one shared digit, none if New);
* exactly one at a New vertex: it steps down, the other waits;
* one Visited, one Floor: the Visited walker moves; the Floor walker waits
  if that move was downward and copies it otherwise.

R therefore never sits above S, and every visit of S to a floor vertex is
matched by a simultaneous visit of R.  ``coupled_step`` is the readable
reference; ``couple`` runs the compiled kernel, which makes the same moves
from the same stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from erwlab import _kernels as K
from erwlab.lattice import (
    DIRECTIONS, ORIGIN, ColumnStore, Site, StepKind, WalkState, apply_move, as_site,
    excited_delta, is_legal_configuration,
)
from erwlab.rng import RngStream

_DIR_VISITED = tuple(int(v) for v in K.DIR_TABLE[0])
_DIR_FLOOR = tuple(int(v) for v in K.DIR_TABLE[1])
DOWN = (0, 0, -1)

VIOLATION_NAMES = {
    K.V_XY: "horizontal positions differ",
    K.V_HEIGHT_WAIT: "z_R - wait_R != z_S - wait_S",
    K.V_ORDER: "z_R > z_S",
    K.V_SUBSET: "S not at a new vertex but Vis_S not downward-closed or Vis_R not in Vis_S",
    K.V_FORBIDDEN: "same vertex is new for S but visited for R",
    K.V_FLOOR: "S on the floor without R at the same vertex",
    K.V_CLOCK: "tau != t + wait for some walker",
}


class CouplingViolation(AssertionError):
    def __init__(self, code: int, tau: int, transcript: list[str] | None = None):
        self.code = code
        self.tau = tau
        self.transcript = transcript or []
        msg = f"coupling invariant broken at tau={tau}: {VIOLATION_NAMES.get(code, code)}"
        super().__init__(msg)


@dataclass
class CouplingState:
    R: WalkState
    S: WalkState
    wait_R: int = 0
    wait_S: int = 0
    tau: int = 0

    @property
    def t_R(self) -> int:
        return self.R.t

    @property
    def t_S(self) -> int:
        return self.S.t

    @classmethod
    def begin(cls, w, vis_R=(), vis_S=(), target=ORIGIN, store="naive") -> "CouplingState":
        w = as_site(w)
        R = WalkState.begin(w, vis_R, store=store, watch=(as_site(target),))
        S = WalkState.begin(w, vis_S, store=store, watch=(as_site(target),))
        return cls(R, S)


def _visited(state: WalkState) -> set:
    return set(state.store)


def check_invariants(cs: CouplingState) -> int:
    """0 if every coupling invariant holds now, else the first violation code."""
    R, S = cs.R, cs.S
    (xR, yR, zR), (xS, yS, zS) = R.position, S.position
    kR, kS = R.kind(), S.kind()
    if (xR, yR) != (xS, yS):
        return K.V_XY
    if zR - cs.wait_R != zS - cs.wait_S:
        return K.V_HEIGHT_WAIT
    if zR > zS:
        return K.V_ORDER
    if kS is not StepKind.NEW:
        vs = _visited(S)
        closed = all(s.z == 1 or Site(s.x, s.y, s.z - 1) in vs for s in vs)
        if not closed or not _visited(R) <= vs:
            return K.V_SUBSET
    if kS is StepKind.NEW and kR is StepKind.VISITED and zR == zS:
        return K.V_FORBIDDEN
    if zS == 0 and R.position != S.position:
        return K.V_FLOOR
    if cs.tau != R.t + cs.wait_R or cs.tau != S.t + cs.wait_S:
        return K.V_CLOCK
    return 0


def coupled_step(cs: CouplingState, rng, checked: bool = False) -> str:
    """Advance the coupling by one step; returns a one-line description."""
    if checked:
        code = check_invariants(cs)
        if code:
            raise CouplingViolation(code, cs.tau)
    R, S = cs.R, cs.S
    kR, kS = R.kind(), S.kind()
    if kR is kS:
        if kR is StepKind.NEW:
            delta = excited_delta(R)
            rule = "both new: down"
        else:
            table = _DIR_FLOOR if kR is StepKind.FLOOR else _DIR_VISITED
            delta = DIRECTIONS[table[rng.digit()]]
            rule = f"both {kR.value}: move {delta}"
        apply_move(R, kR, delta)
        apply_move(S, kS, delta)
    elif StepKind.NEW in (kR, kS):
        mover, other = (R, S) if kR is StepKind.NEW else (S, R)
        apply_move(mover, StepKind.NEW, excited_delta(mover))
        if other is S:
            cs.wait_S += 1
        else:
            cs.wait_R += 1
        rule = f"{'R' if mover is R else 'S'} new: down, other waits"
    else:
        delta = DIRECTIONS[_DIR_VISITED[rng.digit()]]
        mover, other, ko = (R, S, kS) if kR is StepKind.VISITED else (S, R, kR)
        apply_move(mover, StepKind.VISITED, delta)
        if delta == DOWN:
            if other is S:
                cs.wait_S += 1
            else:
                cs.wait_R += 1
            rule = f"{'R' if mover is R else 'S'} visited: down, floor walker waits"
        else:
            apply_move(other, ko, delta)
            rule = f"{'R' if mover is R else 'S'} visited: move {delta}, floor walker copies"
    cs.tau += 1
    return rule


def _describe(cs: CouplingState) -> str:
    return (f"tau={cs.tau} R={tuple(cs.R.position)}({cs.R.kind().value}) "
            f"S={tuple(cs.S.position)}({cs.S.kind().value}) "
            f"wait_R={cs.wait_R} wait_S={cs.wait_S}")


# ------------------------------------------------------------------ reports

@dataclass
class DominanceReport:
    """Outcome of one coupled run.

    ``V_R``/``V_S`` count visits to ``target`` at real times 0..t of each
    walker.  ``tau_R`` is the coupling step at which R completed t moves;
    S finishes its remaining ``t - t_S`` moves afterwards while the coupling
    keeps running.
    """

    t: int
    target: Site
    V_R: int
    V_S: int
    wait_R: int
    wait_S: int
    tau: int
    tau_R: int
    z_R_end: int
    z_S_end: int
    checked: bool
    violation: int = 0
    violation_tau: int = -1
    transcript: list[str] = field(default_factory=list)

    @property
    def dominated(self) -> bool:
        return self.V_R >= self.V_S

    @property
    def ok(self) -> bool:
        return self.violation == 0 and self.dominated

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "t", "V_R", "V_S", "wait_R", "wait_S", "tau", "tau_R", "z_R_end",
            "z_S_end", "checked", "violation", "violation_tau")}
        d["target"] = list(self.target)
        d["violation_name"] = VIOLATION_NAMES.get(self.violation, "")
        return d


def validate_setup(w, vis_R, vis_S, target) -> tuple[Site, list[Site], list[Site], Site]:
    w = as_site(w)
    target = as_site(target)
    if target.z != 0:
        raise ValueError(f"target {tuple(target)} is not a floor vertex")
    if w.z < 0:
        raise ValueError("start must lie in the half-space")
    vis_R = [as_site(s) for s in vis_R]
    vis_S = [as_site(s) for s in vis_S]
    for name, cfg in (("R", vis_R), ("S", vis_S)):
        verdict = is_legal_configuration(cfg)
        if not verdict:
            raise ValueError(f"configuration of {name} is illegal: {verdict.reason} at "
                             f"{tuple(verdict.site)}")
    extra = set(vis_R) - set(vis_S)
    if extra:
        raise ValueError(f"Vis_R(0) is not contained in Vis_S(0): {tuple(min(extra))}")
    return w, vis_R, vis_S, target


def run_coupling_reference(w, vis_R, vis_S, t: int, target=ORIGIN, checked: bool = True,
                           rng=None, seed: int = 0, replica: int = 0,
                           validate: bool = True, keep: int = 0) -> DominanceReport:
    """Pure-Python coupled run (the oracle for ``couple``).

    ``keep`` > 0 retains the last ``keep`` transcript lines; on a violation
    the report carries them instead of raising.
    """
    if validate:
        w, vis_R, vis_S, target = validate_setup(w, vis_R, vis_S, target)
    rng = rng if rng is not None else RngStream(seed, replica)
    cs = CouplingState.begin(w, vis_R, vis_S, target)
    lines: list[str] = []
    tau_R = 0 if t == 0 else -1
    V_R = cs.R.visits(target) if t == 0 else None
    zR_end = zS_end = w.z
    violation = 0
    vtau = -1
    try:
        while True:
            if checked:
                code = check_invariants(cs)
                if code:
                    raise CouplingViolation(code, cs.tau)
            if cs.R.t >= t and cs.S.t >= t:
                break
            rule = coupled_step(cs, rng)
            if keep:
                lines.append(f"{rule}; {_describe(cs)}")
                del lines[:-keep]
            if cs.R.t == t and tau_R < 0:
                tau_R = cs.tau
                V_R = cs.R.visits(target)
                zR_end, zS_end = cs.R.z, cs.S.z
    except CouplingViolation as exc:
        violation, vtau = exc.code, exc.tau
        lines.append(f"VIOLATION {VIOLATION_NAMES[exc.code]}; {_describe(cs)}")
        if not keep:
            raise CouplingViolation(exc.code, exc.tau, lines) from None
    return DominanceReport(
        t=t, target=target, V_R=V_R if V_R is not None else cs.R.visits(target),
        V_S=cs.S.visits(target), wait_R=cs.wait_R, wait_S=cs.wait_S, tau=cs.tau,
        tau_R=tau_R, z_R_end=zR_end, z_S_end=zS_end, checked=checked,
        violation=violation, violation_tau=vtau, transcript=lines)


def _column_store(cfg) -> ColumnStore:
    return ColumnStore(cfg)


def _bad_columns(store_R: ColumnStore, store_S: ColumnStore) -> int:
    cols_S = store_S.columns()
    return sum(1 for c, h in store_R.columns().items() if h > cols_S.get(c, 0))


def couple(w, vis_R, vis_S, t: int, target=ORIGIN, checked: bool = True,
           seed: int = 0, replica: int = 0, stream: RngStream | None = None,
           validate: bool = True, transcript_lines: int = 40) -> DominanceReport:
    """Compiled coupled run.  On a violation the run is replayed by the
    reference implementation to attach a transcript of the last steps."""
    if validate:
        w, vis_R, vis_S, target = validate_setup(w, vis_R, vis_S, target)
    else:
        w, target = as_site(w), as_site(target)
    fresh = stream is None
    stream = RngStream(seed, replica) if fresh else stream
    sR, sS = _column_store(vis_R), _column_store(vis_S)
    cs = np.zeros(K.N_CSLOTS, dtype=np.int64)
    cs[K.C_DIG], cs[K.C_ND] = stream.buffered()
    cs[K.C_BAD] = _bad_columns(sR, sS)
    cs[K.C_TAUR] = 0 if t == 0 else -1
    cs[K.C_ZR_END] = cs[K.C_ZS_END] = w.z
    wk = np.zeros((2, K.N_WFIELDS), dtype=np.int64)
    for i in range(2):
        wk[i, K.W_X], wk[i, K.W_Y], wk[i, K.W_Z] = w
        wk[i, K.W_CK] = -1
        wk[i, K.W_V] = int(w == target)
    tg = np.array(target, dtype=np.int64)
    g = stream.generator
    while True:
        status = K.couple_kernel(g, cs, wk, tg, int(t), bool(checked),
                                 sR.keys, sR.vals, sR.tiles, sR.meta,
                                 sS.keys, sS.vals, sS.tiles, sS.meta,
                                 K.DIR_TABLE, K.DX, K.DY, K.DZ)
        if status == K.GROW:
            for s in (sR, sS):
                while not K.has_room(s.keys, s.tiles, s.meta, 1):
                    s.grow()
            continue
        if status == K.OVERFLOW:
            raise OverflowError("column height exceeded the store's range")
        break
    stream.restore(cs[K.C_DIG], cs[K.C_ND])
    rep = DominanceReport(
        t=t, target=target, V_R=int(cs[K.C_VR]), V_S=int(cs[K.C_VS]),
        wait_R=int(wk[0, K.W_WAIT]), wait_S=int(wk[1, K.W_WAIT]), tau=int(cs[K.C_TAU]),
        tau_R=int(cs[K.C_TAUR]), z_R_end=int(cs[K.C_ZR_END]), z_S_end=int(cs[K.C_ZS_END]),
        checked=checked)
    if status == K.VIOLATION:
        rep.violation = int(cs[K.C_CODE])
        rep.violation_tau = int(cs[K.C_TAU])
        if fresh and transcript_lines:
            replay = run_coupling_reference(
                w, vis_R, vis_S, t, target, checked=True, seed=stream.seed,
                replica=stream.replica, validate=False, keep=transcript_lines)
            rep.transcript = replay.transcript
    return rep


@dataclass
class CouplingSummary:
    runs: int
    t: int
    violations: int
    dominance_failures: int
    V_R: np.ndarray
    V_S: np.ndarray
    first_failure: DominanceReport | None = None

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.dominance_failures == 0

    def tail_probabilities(self, kmax: int | None = None):
        """(k, P(V_R >= k), P(V_S >= k)) rows from the paired sample."""
        kmax = int(max(self.V_R.max(), self.V_S.max())) if kmax is None else kmax
        ks = np.arange(kmax + 1)
        pr = (self.V_R[None, :] >= ks[:, None]).mean(axis=1)
        ps = (self.V_S[None, :] >= ks[:, None]).mean(axis=1)
        return ks, pr, ps

    def as_dict(self) -> dict:
        d = {"runs": self.runs, "t": self.t, "violations": self.violations,
             "dominance_failures": self.dominance_failures,
             "mean_V_R": float(self.V_R.mean()) if self.runs else 0.0,
             "mean_V_S": float(self.V_S.mean()) if self.runs else 0.0,
             "ok": self.ok}
        if self.first_failure is not None:
            d["first_failure"] = self.first_failure.as_dict()
            d["transcript"] = self.first_failure.transcript
        return d


def couple_many(w, vis_R, vis_S, t: int, runs: int, target=ORIGIN, checked: bool = True,
                seed: int = 0, progress=None) -> CouplingSummary:
    w, vis_R, vis_S, target = validate_setup(w, vis_R, vis_S, target)
    vr = np.zeros(runs, dtype=np.int64)
    vs = np.zeros(runs, dtype=np.int64)
    nviol = nfail = 0
    first = None
    for i in range(runs):
        rep = couple(w, vis_R, vis_S, t, target, checked, seed=seed, replica=i,
                     validate=False)
        vr[i], vs[i] = rep.V_R, rep.V_S
        if rep.violation:
            nviol += 1
        if not rep.dominated:
            nfail += 1
        if first is None and not rep.ok:
            first = rep
        if progress is not None:
            progress(i + 1, runs)
    return CouplingSummary(runs, t, nviol, nfail, vr, vs, first)

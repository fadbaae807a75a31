"""Ensemble runs and the estimators built on them.

One compiled walk of length ``max(t_schedule)`` serves every horizon: all
recorded statistics are prefix statistics, read off at checkpoints.  The
resulting cross-horizon correlation is harmless for the per-horizon
intervals reported here, but means at different horizons are not
independent samples.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from erwlab.engine import DriftSet, kernel_walk, stat_names
from erwlab.lattice import ORIGIN, ColumnStore, Site, as_site
from erwlab.rng import RngStream
from erwlab.stats import EnsembleStats, linear_fit, log_floor, mean_ci, wilson

KERNEL_VERSION = "1"
MODES = ("erw", "symmetric", "drift")


class InsufficientData(RuntimeError):
    pass


def parse_mode(spec: str) -> tuple[str, float]:
    """'erw' | 'symmetric' | 'drift:p' -> (mode, p)."""
    if spec.startswith("drift"):
        _, _, p = spec.partition(":")
        if not p:
            raise ValueError("drift mode needs a probability, e.g. drift:0.5")
        p = float(p)
        if not 0 < p < 1:
            raise ValueError("drift probability must lie in (0, 1)")
        return "drift", p
    if spec not in ("erw", "symmetric"):
        raise ValueError(f"unknown mode {spec!r}")
    return spec, 1.0


def geometric_schedule(lo: int, hi: int, ratio: int = 2) -> tuple[int, ...]:
    out = []
    t = lo
    while t <= hi:
        out.append(t)
        t *= ratio
    return tuple(out)


@dataclass(frozen=True)
class EnsembleConfig:
    t_schedule: tuple[int, ...]
    replicas: int
    master_seed: int = 0
    mode: str = "erw"
    drift_p: float = 1.0
    targets: tuple[Site, ...] = (ORIGIN,)
    cylinder_radius: int = 0
    window: int = 0

    def __post_init__(self):
        ts = tuple(int(t) for t in self.t_schedule)
        if not ts or ts[0] < 1 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("t_schedule must be a strictly increasing list of t >= 1")
        if self.replicas < 2:
            raise ValueError("an ensemble needs at least 2 replicas")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "drift" and not 0 < self.drift_p < 1:
            raise ValueError("drift mode needs 0 < p < 1")
        if self.mode != "drift" and self.drift_p != 1.0:
            raise ValueError("drift_p only applies to drift mode")
        if self.mode == "drift" and (self.cylinder_radius or self.window):
            raise ValueError("drift mode records no cylinder or window statistics")
        tg = [as_site(v) for v in self.targets]
        if ORIGIN in tg:
            tg.remove(ORIGIN)
        tg.insert(0, ORIGIN)
        for v in tg:
            if v.z < 0:
                raise ValueError("targets must lie in the half-space")
        object.__setattr__(self, "t_schedule", ts)
        object.__setattr__(self, "targets", tuple(tg))
        object.__setattr__(self, "replicas", int(self.replicas))
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["t_schedule"] = list(self.t_schedule)
        d["targets"] = [list(v) for v in self.targets]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        d = dict(d)
        d["t_schedule"] = tuple(d["t_schedule"])
        d["targets"] = tuple(as_site(v) for v in d.get("targets", [ORIGIN]))
        return cls(**d)

    def key(self) -> str:
        blob = json.dumps({"config": self.as_dict(), "kernel": KERNEL_VERSION}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:20]

    @property
    def names(self) -> tuple[str, ...]:
        return stat_names(self.targets)


@dataclass
class EnsembleResult:
    """Per-replica checkpoint tables of one ensemble.

    ``table[i, k, s]`` is statistic ``names[s]`` of replica ``i`` at
    ``t_schedule[k]``.  ``first_hit``/``window_visits`` are per target.
    """

    config: EnsembleConfig
    table: np.ndarray
    first_hit: np.ndarray
    window_visits: np.ndarray
    _stats: EnsembleStats | None = field(default=None, repr=False)

    @property
    def names(self) -> tuple[str, ...]:
        return self.config.names

    @property
    def horizons(self) -> tuple[int, ...]:
        return self.config.t_schedule

    def column(self, name: str, t: int | None = None) -> np.ndarray:
        s = self.names.index(name)
        if t is None:
            return self.table[:, :, s]
        return self.table[:, self.horizons.index(t), s]

    @property
    def stats(self) -> EnsembleStats:
        if self._stats is None:
            self._stats = EnsembleStats.from_table(self.config.key(), self.horizons,
                                                   self.names, self.table)
        return self._stats

    def save(self, path) -> None:
        np.savez_compressed(path, config=json.dumps(self.config.as_dict(), sort_keys=True),
                            kernel=KERNEL_VERSION, table=self.table,
                            first_hit=self.first_hit, window_visits=self.window_visits)

    @classmethod
    def load(cls, path) -> "EnsembleResult":
        with np.load(path) as z:
            cfg = EnsembleConfig.from_dict(json.loads(str(z["config"])))
            if str(z["kernel"]) != KERNEL_VERSION:
                raise ValueError("cached ensemble was produced by a different kernel version")
            return cls(cfg, z["table"], z["first_hit"], z["window_visits"])


def _run_chunk(cfg: EnsembleConfig, lo: int, hi: int, table, first_hit, window_visits,
               progress=None) -> None:
    store = DriftSet() if cfg.mode == "drift" else ColumnStore(capacity=256)
    for i in range(lo, hi):
        kw = kernel_walk(RngStream(cfg.master_seed, i), cfg.t_schedule, cfg.targets,
                         mode=cfg.mode, drift_p=cfg.drift_p,
                         cylinder_radius=cfg.cylinder_radius, window=cfg.window, store=store)
        table[i] = kw.table
        first_hit[i] = kw.first_hit
        window_visits[i] = kw.window_visits
        store.reset()
        if progress is not None:
            progress(1)


def default_cache_dir() -> Path | None:
    d = os.environ.get("ERWLAB_CACHE")
    return Path(d) if d else None


def run_ensemble(cfg: EnsembleConfig, threads: int = 1, cache_dir=None,
                 progress=None) -> EnsembleResult:
    """Run (or load from ``cache_dir``) every replica of ``cfg``.

    Replica ``i`` always uses stream ``(master_seed, i)`` and writes row
    ``i``, so the result does not depend on ``threads``.
    """
    path = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        path = cache_dir / f"{cfg.key()}.npz"
        if path.exists():
            res = EnsembleResult.load(path)
            if res.config == cfg:
                return res
    nh, nt = len(cfg.t_schedule), len(cfg.targets)
    table = np.zeros((cfg.replicas, nh, nt + 7), dtype=np.int64)
    first_hit = np.full((cfg.replicas, nt), -1, dtype=np.int64)
    window_visits = np.zeros((cfg.replicas, nt), dtype=np.int64)
    threads = max(1, int(threads))
    if threads == 1:
        _run_chunk(cfg, 0, cfg.replicas, table, first_hit, window_visits, progress)
    else:
        nchunks = min(cfg.replicas, threads * 4)
        edges = np.linspace(0, cfg.replicas, nchunks + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            futs = [ex.submit(_run_chunk, cfg, int(a), int(b), table, first_hit,
                              window_visits, progress)
                    for a, b in zip(edges[:-1], edges[1:]) if b > a]
            for f in futs:
                f.result()
    res = EnsembleResult(cfg, table, first_hit, window_visits)
    if path is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        res.save(tmp)
        os.replace(tmp, path)
    return res


# ---------------------------------------------------------- single paths

@dataclass
class PathStats:
    t: int
    V: dict
    N: int
    DF: int
    F: int
    z: int
    N_new: int
    l: int = 0

    @property
    def M(self) -> float:
        return self.z + self.N_new - self.F / 5


def run_walk_stats(t: int, stream: RngStream, targets=(ORIGIN,), mode: str = "erw",
                   drift_p: float = 1.0) -> PathStats:
    """One walk from the origin with empty history, summarised at time ``t``."""
    if t < 1:
        raise ValueError("t must be at least 1")
    targets = tuple(as_site(v) for v in targets)
    kw = kernel_walk(stream, [t], targets, mode=mode, drift_p=drift_p)
    row = dict(zip(kw.names, (int(v) for v in kw.table[0])))
    V = {v: row[name] for v, name in zip(targets, kw.names)}
    return PathStats(t=t, V=V, N=row["N"], DF=row["DF"], F=row["F"], z=row["z"],
                     N_new=row["N_new"], l=row["l"])


# ------------------------------------------------------------- returns

@dataclass
class ReturnRow:
    t: int
    mean: float
    ci_lo: float
    ci_hi: float
    replicas: int


def estimate_returns(res: EnsembleResult, stat: str = "V") -> list[ReturnRow]:
    st = res.stats
    return [ReturnRow(t, m, lo, hi, st.count) for t, m, lo, hi in st.summary(stat)]


def summary_rows(res: EnsembleResult, stats=None) -> list[tuple]:
    """(t, stat, mean, ci_lo, ci_hi, replicas) for every horizon and statistic."""
    st = res.stats
    rows = []
    for name in (stats or res.names):
        for t, m, lo, hi in st.summary(name):
            rows.append((t, name, m, lo, hi, st.count))
    rows.sort(key=lambda r: (r[0], res.names.index(r[1])))
    return rows


@dataclass
class RegressionResult:
    t: np.ndarray
    y: np.ndarray
    models: dict
    winner: str

    def rss(self, model: str) -> float:
        return self.models[model]["rss"]

    def as_dict(self) -> dict:
        return {"winner": self.winner,
                "models": {k: {"coef": [float(c) for c in v["coef"]], "rss": v["rss"]}
                           for k, v in self.models.items()}}


SCALING_MODELS = ("sqrt_log", "log", "constant")


def fit_scaling(t, y) -> RegressionResult:
    """Least-squares fits of y against a sqrt(L) + b, a L + b and a constant.

    L = max{1, ln t}.  The winner has the smallest residual sum of squares.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 5:
        raise ValueError("scaling fits need at least 5 horizons")
    L = log_floor(t)
    designs = {
        "sqrt_log": np.column_stack([np.sqrt(L), np.ones_like(L)]),
        "log": np.column_stack([L, np.ones_like(L)]),
        "constant": np.ones((t.size, 1)),
    }
    models = {}
    for name, X in designs.items():
        fit = linear_fit(X, y)
        models[name] = {"coef": fit.coef, "rss": fit.rss}
    winner = min(SCALING_MODELS, key=lambda m: models[m]["rss"])
    return RegressionResult(t, y, models, winner)


def no_plateau(rows: list[ReturnRow], widths: float = 5.0) -> bool:
    """Last mean exceeds the first by more than ``widths`` CI half-widths."""
    first, last = rows[0], rows[-1]
    half = max(first.ci_hi - first.mean, last.ci_hi - last.mean)
    return last.mean - first.mean > widths * half


# ---------------------------------------------------------------- tails

@dataclass
class TailFit:
    slope: float
    slope_ci: tuple[float, float]
    intercept: float
    r2: float
    rss: float


@dataclass
class TailReport:
    t: int
    replicas: int
    lam: np.ndarray
    survival: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    fit_lambda: TailFit
    fit_lambda_sq: TailFit

    @property
    def slope_negative(self) -> bool:
        return self.fit_lambda.slope_ci[1] < 0

    def as_dict(self) -> dict:
        return {
            "t": self.t, "replicas": self.replicas,
            "lambda": [float(x) for x in self.lam],
            "survival": [float(x) for x in self.survival],
            "fit_lambda": asdict(self.fit_lambda), "fit_lambda_sq": asdict(self.fit_lambda_sq),
            "slope_negative": self.slope_negative,
        }


def _survival_fit(x, s, n, counts) -> TailFit:
    y = np.log(s)
    w = counts / np.maximum(1.0 - s, 1.0 / n)  # 1 / var(log S) ~ n S / (1 - S)
    fit = linear_fit(np.column_stack([x, np.ones_like(x)]), y, w)
    yhat = fit.coef[0] * x + fit.coef[1]
    ybar = np.average(y, weights=w)
    r2 = 1.0 - float(np.sum(w * (y - yhat) ** 2)) / float(np.sum(w * (y - ybar) ** 2))
    return TailFit(float(fit.coef[0]), fit.ci(0), float(fit.coef[1]), r2, fit.rss)


def survival_table(values: np.ndarray, scale: float, min_count: int = 10):
    """Empirical P(X > k) for integer thresholds k with at least ``min_count``
    exceedances; returns (lambda = k / scale, S, lo, hi, counts)."""
    values = np.asarray(values)
    n = values.size
    vmax = int(values.max())
    counts = np.bincount(values.astype(np.int64) - 0, minlength=vmax + 1) \
        if values.min() >= 0 else None
    if counts is None:
        raise ValueError("survival tables need nonnegative counts")
    exceed = n - np.cumsum(counts)  # exceed[k] = #{X > k}
    ks = np.nonzero(exceed >= min_count)[0]
    s = exceed[ks] / n
    ci = np.array([wilson(int(e), n) for e in exceed[ks]]).reshape(-1, 2)
    return ks / scale, s, ci[:, 0], ci[:, 1], exceed[ks].astype(float)


def tail_estimator(values, t: int, min_count: int = 10, min_replicas: int = 10**4,
                   lam_min: float = 0.0) -> TailReport:
    """Survival P(V > lambda sqrt(L)) and log-linear fits in lambda and lambda^2.

    Only grid points with 0 < S < 1, at least ``min_count`` exceedances and
    lambda >= ``lam_min`` enter the fits.  Points on one grid are nested
    events, so the slope intervals are indicative rather than exact.
    """
    values = np.asarray(values)
    if values.size < min_replicas:
        raise ValueError(f"tail estimation needs at least {min_replicas} replicas")
    scale = math.sqrt(float(log_floor(t)))
    lam, s, lo, hi, cnt = survival_table(values, scale, min_count)
    m = (s > 0) & (s < 1) & (lam >= lam_min)
    if m.sum() < 3:
        raise InsufficientData("too few populated tail points to fit")
    f1 = _survival_fit(lam[m], s[m], values.size, cnt[m])
    f2 = _survival_fit(lam[m] ** 2, s[m], values.size, cnt[m])
    return TailReport(t, values.size, lam, s, lo, hi, f1, f2)


# -------------------------------------------------------- range & floor

@dataclass
class RatioRow:
    t: int
    stat: str
    mean: float
    ci_lo: float
    ci_hi: float


@dataclass
class RangeReport:
    rows: list
    spread: dict
    factor: float

    def bounded(self, stat: str) -> bool:
        return self.spread[stat] < self.factor

    @property
    def ok(self) -> bool:
        return all(self.bounded(s) for s in self.spread)


RATIO_SCALES = {
    "N": lambda t, L: t / np.sqrt(L),
    "DF": lambda t, L: t / L,
    "F": lambda t, L: t / np.sqrt(L),
}


def range_and_floor_report(res: EnsembleResult, horizons=None, factor: float = 3.0
                           ) -> RangeReport:
    """Ratios N/(t/sqrt L), DF/(t/L), F/(t/sqrt L); spread = max/min of the means."""
    hz = [t for t in res.horizons if horizons is None or t in horizons]
    st = res.stats
    rows, spread = [], {}
    for name, scale in RATIO_SCALES.items():
        s = res.names.index(name)
        means = []
        for t in hz:
            k = res.horizons.index(t)
            m, h, _ = mean_ci(st.count, st.sums[k][s], st.sumsq[k][s])
            sc = float(scale(t, log_floor(t)))
            rows.append(RatioRow(t, name, m / sc, (m - h) / sc, (m + h) / sc))
            means.append(m / sc)
        spread[name] = max(means) / min(means) if min(means) > 0 else math.inf
    return RangeReport(rows, spread, factor)


def martingale_check(res: EnsembleResult, t: int | None = None) -> dict:
    """Mean of z + N_new - F/5 with its standard error at horizon ``t``."""
    t = res.horizons[-1] if t is None else t
    k = res.horizons.index(t)
    s = res.names.index("M5")
    m, h, se = mean_ci(res.stats.count, res.stats.sums[k][s], res.stats.sumsq[k][s])
    return {"t": t, "mean": m / 5, "se": se / 5, "z_score": (m / se) if se > 0 else 0.0,
            "within_3se": abs(m) <= 3 * se}


def compare_ensembles(a: EnsembleResult, b: EnsembleResult, stat: str = "V") -> list[dict]:
    """Two-sample z-scores of the means of ``stat`` at each common horizon."""
    out = []
    for t in a.horizons:
        if t not in b.horizons:
            continue
        xa, xb = a.column(stat, t), b.column(stat, t)
        se = math.sqrt(xa.var(ddof=1) / xa.size + xb.var(ddof=1) / xb.size)
        d = float(xa.mean() - xb.mean())
        out.append({"t": t, "diff": d, "se": se, "z": d / se if se > 0 else 0.0})
    return out


# ------------------------------------------------------------ cylinder

@dataclass
class CylinderReport:
    t: int
    r: int
    l: np.ndarray
    lam: np.ndarray
    survival: np.ndarray
    fit: TailFit | None

    @property
    def distribution(self) -> dict[int, int]:
        vals, cnt = np.unique(self.l, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, cnt)}

    @property
    def slope_negative(self) -> bool:
        return self.fit is not None and self.fit.slope_ci[1] < 0


def cylinder_visits(t: int, r: int, replicas: int, seed: int = 0, threads: int = 1,
                    cache_dir=None, min_count: int = 10) -> CylinderReport:
    """Entries l into the vertical cylinder of radius r (exits through radius 2r).

    Survival P(l > lambda log t) on the grid lambda = k / L, with a
    log-linear fit in lambda.
    """
    if r < 1:
        raise ValueError("cylinder radius must be at least 1")
    cfg = EnsembleConfig((t,), replicas, seed, cylinder_radius=r)
    res = run_ensemble(cfg, threads, cache_dir)
    l = res.column("l", t)
    L = float(log_floor(t))
    lam, s, lo, hi, cnt = survival_table(l, L, min_count)
    m = (s > 0) & (s < 1)
    fit = _survival_fit(lam[m], s[m], l.size, cnt[m]) if m.sum() >= 3 else None
    return CylinderReport(t, r, l, lam, s, fit)


# -------------------------------------------------- conditioned visits

@dataclass
class ConditionedReport:
    v: Site
    t: int
    replicas: int
    hits: int
    lhs: float
    lhs_se: float
    lhs_direct: float
    lhs_direct_se: float
    rhs: float
    rhs_se: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.lhs_se ** 2 + self.rhs_se ** 2)

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 3 * self.sigma

    def as_dict(self) -> dict:
        d = asdict(self)
        d["v"] = list(self.v)
        d["sigma"] = self.sigma
        d["holds"] = self.holds
        return d


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.int64)
    if x.size < 2:
        return (float(x.mean()) if x.size else math.nan), math.inf
    m, _, se = mean_ci(x.size, int(x.sum()), int((x * x).sum()))
    return m, se


def conditioned_config(v, t: int, replicas: int, seed: int = 0) -> EnsembleConfig:
    """Walks of 2t steps watching 0 and v, counting v-visits in a window of t after T_v."""
    v = as_site(v)
    if v.z != 0:
        raise ValueError("v must be a floor vertex")
    return EnsembleConfig((t, 2 * t), replicas, seed, targets=(ORIGIN, v), window=t)


def conditioned_visit_bound_experiment(v, t: int, replicas: int, seed: int = 0,
                                       threads: int = 1, cache_dir=None) -> ConditionedReport:
    """Visits to a floor vertex v after it is first hit, against returns to 0.

    Each walk runs 2t steps.  Walks that hit v by time t contribute the
    number of visits to v during [T_v, T_v + t] (the left side); the right
    side is V(t; 0) over all walks.  ``lhs_direct`` is the plain
    E(V(t; v) | V(t; v) > 0) from the same walks.
    """
    v = as_site(v)
    cfg = conditioned_config(v, t, replicas, seed)
    res = run_ensemble(cfg, threads, cache_dir)
    j = cfg.targets.index(v)
    hit = (res.first_hit[:, j] >= 0) & (res.first_hit[:, j] <= t)
    if hit.sum() < 2:
        raise InsufficientData(f"only {int(hit.sum())} walks reached {tuple(v)} by time {t}")
    lhs, lhs_se = _mean_se(res.window_visits[hit, j])
    vt = res.table[:, 0, j]
    direct, direct_se = _mean_se(vt[vt > 0])
    rhs, rhs_se = _mean_se(res.table[:, 0, 0])
    return ConditionedReport(v, t, replicas, int(hit.sum()), lhs, lhs_se, direct, direct_se,
                             rhs, rhs_se)

"""Mergeable ensemble accumulators, confidence intervals and small regressions.

Sums and sums of squares are kept as Python integers, so merging partial
ensembles reproduces a single-pass result exactly whatever the split.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats as sps

NORMAL_MIN = 1000  # replicas from which the normal quantile replaces Student's t


def log_floor(t) -> np.ndarray:
    """Natural log with the floor max{1, log t}."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.maximum(1.0, np.log(np.maximum(t, 1.0)))


def _sum_and_squares(col: np.ndarray) -> tuple[int, int]:
    """Exact (sum, sum of squares) of an int64 column as Python ints.

    Squares are split as (h 2^16 + l)^2 so each partial sum stays far from
    int64 overflow for |values| < 2^31 and up to ~2^20 rows.
    """
    col = np.asarray(col, dtype=np.int64)
    if col.size == 0:
        return 0, 0
    if col.size > 1 << 20:
        parts = [_sum_and_squares(c) for c in np.array_split(col, col.size // (1 << 20) + 1)]
        return sum(p[0] for p in parts), sum(p[1] for p in parts)
    if np.abs(col).max() >= 1 << 31:
        return int(col.sum()), sum(int(v) * int(v) for v in col)
    hi = col >> 16
    lo = col & 0xFFFF
    s = int(col.sum())
    sq = (int((hi * hi).sum()) << 32) + (int((hi * lo).sum()) << 17) + int((lo * lo).sum())
    return s, sq


def mean_ci(count: int, total, total_sq, level: float = 0.95):
    """(mean, half-width, std error) from exact sums.

    Student's t below NORMAL_MIN replicas, normal quantile above.
    """
    if count < 1:
        raise ValueError("no observations")
    mean = Fraction(total, count)
    if count < 2:
        return float(mean), float("inf"), float("inf")
    var = (Fraction(total_sq) - Fraction(total) ** 2 / count) / (count - 1)
    se = float(var / count) ** 0.5
    q = sps.norm.ppf(0.5 + level / 2) if count >= NORMAL_MIN else sps.t.ppf(0.5 + level / 2,
                                                                            count - 1)
    return float(mean), float(q * se), se


def wilson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    z = sps.norm.ppf(0.5 + level / 2)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return float(lo), float(hi)


@dataclass
class EnsembleStats:
    """Per-horizon count / sum / sum-of-squares for every statistic.

    ``hist[k]`` is the exact histogram of the first statistic (V(t;0) by
    convention) at horizon k.  ``key`` identifies the ensemble
    configuration; only equal keys merge.
    """

    key: str
    horizons: tuple[int, ...]
    names: tuple[str, ...]
    count: int = 0
    sums: list = field(default_factory=list)
    sumsq: list = field(default_factory=list)
    hist: list = field(default_factory=list)

    def __post_init__(self):
        nh, ns = len(self.horizons), len(self.names)
        if not self.sums:
            self.sums = [[0] * ns for _ in range(nh)]
            self.sumsq = [[0] * ns for _ in range(nh)]
            self.hist = [Counter() for _ in range(nh)]

    @classmethod
    def empty(cls, key, horizons, names) -> "EnsembleStats":
        return cls(key, tuple(int(h) for h in horizons), tuple(names))

    @classmethod
    def from_table(cls, key, horizons, names, table: np.ndarray) -> "EnsembleStats":
        """``table`` has shape (replicas, horizons, statistics)."""
        st = cls.empty(key, horizons, names)
        st.add_table(table)
        return st

    def add_table(self, table: np.ndarray) -> None:
        table = np.asarray(table, dtype=np.int64)
        if table.ndim != 3 or table.shape[1:] != (len(self.horizons), len(self.names)):
            raise ValueError("table shape does not match horizons x statistics")
        self.count += table.shape[0]
        for k in range(table.shape[1]):
            for s in range(table.shape[2]):
                a, b = _sum_and_squares(table[:, k, s])
                self.sums[k][s] += a
                self.sumsq[k][s] += b
            vals, cnts = np.unique(table[:, k, 0], return_counts=True)
            self.hist[k].update({int(v): int(c) for v, c in zip(vals, cnts)})

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        if (self.key, self.horizons, self.names) != (other.key, other.horizons, other.names):
            raise ValueError("cannot merge statistics of different configurations")
        out = EnsembleStats.empty(self.key, self.horizons, self.names)
        out.count = self.count + other.count
        out.sums = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self.sums, other.sums)]
        out.sumsq = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self.sumsq, other.sumsq)]
        out.hist = [h1 + h2 for h1, h2 in zip(self.hist, other.hist)]
        return out

    __add__ = merge

    def __eq__(self, other) -> bool:
        if not isinstance(other, EnsembleStats):
            return NotImplemented
        return (self.key, self.horizons, self.names, self.count, self.sums, self.sumsq,
                [dict(h) for h in self.hist]) == (
            other.key, other.horizons, other.names, other.count, other.sums, other.sumsq,
            [dict(h) for h in other.hist])

    def summary(self, name: str, level: float = 0.95) -> list[tuple[int, float, float, float]]:
        """Rows (t, mean, ci_lo, ci_hi) for one statistic."""
        s = self.names.index(name)
        rows = []
        for k, t in enumerate(self.horizons):
            m, h, _ = mean_ci(self.count, self.sums[k][s], self.sumsq[k][s], level)
            rows.append((t, m, m - h, m + h))
        return rows

    def mean_se(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        s = self.names.index(name)
        out = [mean_ci(self.count, self.sums[k][s], self.sumsq[k][s]) for k in range(len(self.horizons))]
        return np.array([o[0] for o in out]), np.array([o[2] for o in out])


# ------------------------------------------------------------- regression

@dataclass
class LinearFit:
    coef: np.ndarray
    stderr: np.ndarray
    rss: float
    dof: int

    def ci(self, i: int, level: float = 0.95) -> tuple[float, float]:
        q = sps.t.ppf(0.5 + level / 2, max(self.dof, 1))
        return float(self.coef[i] - q * self.stderr[i]), float(self.coef[i] + q * self.stderr[i])


def linear_fit(X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> LinearFit:
    """(Weighted) least squares y ~ X b with classical standard errors.

    ``rss`` is the (weighted) residual sum of squares.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    Xw, yw = X * sw[:, None], y * sw
    if np.linalg.matrix_rank(Xw) < X.shape[1]:
        raise ValueError("degenerate design matrix")
    coef, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    resid = yw - Xw @ coef
    rss = float(resid @ resid)
    dof = len(y) - X.shape[1]
    sigma2 = rss / dof if dof > 0 else float("nan")
    cov = sigma2 * np.linalg.inv(Xw.T @ Xw)
    return LinearFit(coef, np.sqrt(np.diag(cov)), rss, dof)

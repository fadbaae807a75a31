"""Hitting probabilities of nearest-neighbour chains on {1..n}.

A chain moves i -> i+1 with probability q_i and i -> i-1 otherwise, for
interior i; 1 and n absorb.  ``r_j`` is the probability of reaching n
before 1 from j.  Two independent routes compute it:

* ``hit_probs_exact``: the ruin product formula
  r_j = sum_{k<j} prod_{i=2..k} rho_i / sum_{k<n} prod_{i=2..k} rho_i,
  rho_i = (1-q_i)/q_i, in exact rationals (n <= EXACT_MAX_N) or in log
  space above that;
* ``hit_probs_solve``: forward elimination of the harmonic equations
  r_i = q_i r_{i+1} + (1-q_i) r_{i-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

EXACT_MAX_N = 64


def as_prob(q) -> Fraction | float:
    if isinstance(q, str):
        q = Fraction(q.strip())
    if isinstance(q, (int, Fraction)):
        return Fraction(q)
    return float(q)


@dataclass(frozen=True)
class BDChain:
    """``q[k]`` is the up-probability at state ``k + 2`` (interior states only)."""

    n: int
    q: tuple
    start: int = 2

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("a chain needs n >= 3 states")
        q = tuple(as_prob(v) for v in self.q)
        if len(q) == 1 and self.n > 3:
            q = q * (self.n - 2)
        if len(q) != self.n - 2:
            raise ValueError(f"expected {self.n - 2} interior probabilities, got {len(q)}")
        for i, v in enumerate(q, start=2):
            if not 0 < v < 1:
                raise ValueError(f"q_{i} = {v} is not in (0, 1)")
        if not 1 <= self.start <= self.n:
            raise ValueError(f"start {self.start} outside 1..{self.n}")
        object.__setattr__(self, "q", q)

    @classmethod
    def constant(cls, n: int, q, start: int = 2) -> "BDChain":
        return cls(n, (q,) * (n - 2), start)

    def q_at(self, i: int):
        return self.q[i - 2]

    def with_start(self, j: int) -> "BDChain":
        return BDChain(self.n, self.q, j)

    def with_q(self, i: int, value) -> "BDChain":
        q = list(self.q)
        q[i - 2] = as_prob(value)
        return BDChain(self.n, tuple(q), self.start)

    @property
    def is_exact(self) -> bool:
        return all(isinstance(v, Fraction) for v in self.q)


# ------------------------------------------------------------------ exact

def _exact_all(chain: BDChain) -> list[Fraction]:
    prods = [Fraction(1)]
    for v in chain.q:
        v = Fraction(v)
        prods.append(prods[-1] * (1 - v) / v)
    total = sum(prods)
    r = [Fraction(0)]
    acc = Fraction(0)
    for p in prods:
        acc += p
        r.append(acc / total)
    return r


def _log_all(chain: BDChain) -> np.ndarray:
    q = np.array([float(v) for v in chain.q])
    logp = np.concatenate(([0.0], np.cumsum(np.log1p(-q) - np.log(q))))
    m = logp.max()
    w = np.exp(logp - m)
    cum = np.concatenate(([0.0], np.cumsum(w)))
    return cum / cum[-1]


def hit_probs_exact(chain: BDChain, exact: bool | None = None) -> list:
    """All of r_1..r_n (index 0 is r_1).

    Exact rationals when ``exact`` (default: n <= EXACT_MAX_N); otherwise
    floats from log-space prefix products, which neither overflow nor lose
    relative accuracy for long chains.
    """
    if exact is None:
        exact = chain.n <= EXACT_MAX_N
    if exact:
        return _exact_all(chain)
    return list(_log_all(chain))


def hit_prob_exact(chain: BDChain, exact: bool | None = None):
    return hit_probs_exact(chain, exact)[chain.start - 1]


def log_hit_probs(chain: BDChain) -> np.ndarray:
    """log r_1..log r_n in floating point (r_1 gives -inf)."""
    if chain.n <= EXACT_MAX_N:
        r = _exact_all(chain)
        out = np.empty(chain.n)
        for i, v in enumerate(r):
            out[i] = -math.inf if v == 0 else math.log(v.numerator) - math.log(v.denominator)
        return out
    q = np.array([float(v) for v in chain.q])
    logp = np.concatenate(([0.0], np.cumsum(np.log1p(-q) - np.log(q))))
    lcum = np.logaddexp.accumulate(logp)
    return np.concatenate(([-math.inf], lcum - lcum[-1]))


# ------------------------------------------------------------------ solve

def hit_probs_solve(chain: BDChain) -> np.ndarray:
    """r_1..r_n from the harmonic equations by forward elimination.

    With r_1 = 0 every interior equation reduces to r_i = a_i r_{i+1},
    a_i = q_i / (1 - (1 - q_i) a_{i-1}).  The pivot is evaluated through
    b = 1 - a as q_i + (1 - q_i) b_{i-1}, a sum of positive terms, so no
    cancellation occurs when a_{i-1} is close to 1.
    """
    n = chain.n
    if n > 10**4:
        raise ValueError("elimination oracle limited to n <= 10^4")
    a = np.zeros(n)
    b_prev = 1.0
    for i in range(2, n):
        qi = float(chain.q_at(i))
        piv = qi + (1.0 - qi) * b_prev
        assert piv > 0.0, "singular harmonic system"
        a[i - 1] = qi / piv
        b_prev = (1.0 - qi) * b_prev / piv
    r = np.zeros(n)
    r[n - 1] = 1.0
    for i in range(n - 1, 1, -1):
        r[i - 1] = a[i - 1] * r[i]
    return r


def hit_prob_solve(chain: BDChain) -> float:
    return float(hit_probs_solve(chain)[chain.start - 1])


def constant_closed_form(n: int, q, j: int):
    """(rho^{j-1} - 1)/(rho^{n-1} - 1) with rho = (1-q)/q, or (j-1)/(n-1) at q = 1/2."""
    q = as_prob(q)
    rho = (1 - q) / q
    if rho == 1:
        return Fraction(j - 1, n - 1) if isinstance(q, Fraction) else (j - 1) / (n - 1)
    return (rho ** (j - 1) - 1) / (rho ** (n - 1) - 1)


def relative_error(a, b) -> float:
    a, b = float(a), float(b)
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


# ------------------------------------------------------------------ checks

@dataclass
class DominanceReport:
    r_A: object
    r_B: object
    holds: bool
    precondition: str | None = None

    @property
    def margin(self):
        return self.r_B - self.r_A


def dominance_check(A: BDChain, B: BDChain) -> DominanceReport:
    """Chains with q^A <= q^B elementwise (same n and start) satisfy r^A <= r^B."""
    problem = None
    if A.n != B.n:
        problem = "different state counts"
    elif A.start != B.start:
        problem = "different starting states"
    elif any(a > b for a, b in zip(A.q, B.q)):
        problem = "q^A is not dominated by q^B"
    ra, rb = hit_prob_exact(A), hit_prob_exact(B)
    if problem:
        return DominanceReport(ra, rb, True, problem)
    return DominanceReport(ra, rb, ra <= rb)


def growth_constant(qbar):
    qbar = as_prob(qbar)
    return (1 - 2 * qbar) / (1 - qbar)


@dataclass
class GrowthReport:
    c: object
    ratios: list
    violations: list
    precondition: str | None = None

    @property
    def holds(self) -> bool:
        return not self.violations

    @property
    def min_ratio(self):
        finite = [x for x in self.ratios if x is not None]
        return min(finite) if finite else None


def growth_ratio_check(chain: BDChain, qbar) -> GrowthReport:
    """r_{j+1} >= r_j (1 + c), c = (1 - 2 qbar)/(1 - qbar), for every 1 <= j < n."""
    qbar = as_prob(qbar)
    c = growth_constant(qbar)
    problem = None
    if not qbar < Fraction(1, 2):
        problem = "qbar must be below 1/2"
    elif any(v > qbar for v in chain.q):
        problem = "some q_i exceeds qbar"
    r = hit_probs_exact(chain)
    ratios, bad = [], []
    for j in range(1, chain.n):
        lo, hi = r[j - 1], r[j]
        ratios.append(None if lo == 0 else hi / lo)
        if not problem and hi < lo * (1 + c):
            bad.append(j)
    return GrowthReport(c, ratios, bad, problem)


# ---------------------------------------------------------------- perturb

def _log_bound_terms(chain: BDChain, p: float):
    diffs = np.array([float(v) for v in chain.q]) - p
    lr = log_hit_probs(chain)
    j = np.arange(1, chain.n + 1)
    need = lr - (chain.n - j) * math.log(p / (1 - p))
    return diffs, need


def implied_constant(chain: BDChain, p, starts=None, lo: float = 1.0, hi: float = 1e6,
                     tol: float = 1e-9) -> float:
    """Smallest C >= 1 with r_j <= C (p/(1-p))^{n-j} prod_i (1 + C (q_i - p)).

    The product runs over the interior states (q_1, q_n do not exist).
    ``starts`` selects the j's that must satisfy the bound (default: the
    chain's start); the bound is increasing in C, so bisection applies.
    Returns ``inf`` if even ``hi`` does not suffice.
    """
    p = float(p)
    diffs, need = _log_bound_terms(chain, p)
    js = [chain.start] if starts is None else list(starts)
    target = max(need[j - 1] for j in js)

    def ok(C):
        return math.log(C) + float(np.sum(np.log1p(C * diffs))) >= target

    if ok(lo):
        return lo
    if not ok(hi):
        return math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class PerturbReport:
    r: float
    C_impl: float
    precondition: str | None = None

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.C_impl)


def perturb_bound_report(chain: BDChain, p, qbar) -> PerturbReport:
    p, qbar = as_prob(p), as_prob(qbar)
    problem = None
    if not 0 < p <= qbar < Fraction(1, 2):
        problem = "need 0 < p <= qbar < 1/2"
    elif any(v < p or v > qbar for v in chain.q):
        problem = "some q_i outside [p, qbar]"
    r = float(hit_prob_exact(chain))
    return PerturbReport(r, implied_constant(chain, p), problem)


@dataclass
class SingleSiteReport:
    site: int
    dq: object
    ratios: list
    implied: float
    holds_with: float | None = None
    holds: bool | None = None


def single_site_perturbation(chain: BDChain, site: int, q_new, C: float | None = None
                             ) -> SingleSiteReport:
    """Raise q at one site and compare r'_j with r_j (1 + C (q'_I - q_I)).

    ``implied`` is the smallest C that works for every start j; if ``C`` is
    given the inequality is also checked with it (exactly when the chain
    is rational).
    """
    q_new = as_prob(q_new)
    dq = q_new - chain.q_at(site)
    if not dq > 0:
        raise ValueError("the perturbation must increase q at the site")
    pert = chain.with_q(site, q_new)
    r, rp = hit_probs_exact(chain), hit_probs_exact(pert)
    ratios = [None if r[j] == 0 else rp[j] / r[j] for j in range(chain.n)]
    implied = max(float((x - 1) / dq) for x in ratios if x is not None)
    rep = SingleSiteReport(site, dq, ratios, max(implied, 0.0))
    if C is not None:
        Cq = Fraction(C) if isinstance(dq, Fraction) else C
        rep.holds_with = C
        rep.holds = all(rp[j] <= r[j] * (1 + Cq * dq) for j in range(chain.n))
    return rep


@dataclass
class TrendReport:
    p: float
    qbar: float
    ns: np.ndarray
    C: np.ndarray
    slope: float
    slope_ci: tuple[float, float]
    intercept: float
    members: dict = field(default_factory=dict)

    @property
    def no_increasing_trend(self) -> bool:
        return bool(np.all(np.isfinite(self.C))) and self.slope_ci[0] <= 0.0


def chain_family(n: int, p, qbar, count: int = 4, seed: int = 0) -> dict[str, BDChain]:
    """Test chains with all q_i in [p, qbar]: both constants plus random draws."""
    fam = {"const_p": BDChain.constant(n, p), "const_qbar": BDChain.constant(n, qbar)}
    rng = np.random.default_rng([seed, n])
    for k in range(count):
        q = rng.uniform(float(p), float(qbar), size=n - 2)
        fam[f"random{k}"] = BDChain(n, tuple(q))
    return fam


def perturb_trend(p, qbar, ns: Sequence[int] = range(5, 201), count: int = 4,
                  seed: int = 0) -> TrendReport:
    """C_impl(n) = max over the family and over all starts; OLS slope in n with 95% CI."""
    from scipy import stats

    ns = np.asarray(list(ns))
    Cs = np.empty(len(ns))
    members: dict[str, list] = {}
    for k, n in enumerate(ns):
        best = 1.0
        for name, ch in chain_family(int(n), p, qbar, count, seed).items():
            c = implied_constant(ch, p, starts=range(2, int(n) + 1))
            members.setdefault(name, []).append(c)
            best = max(best, c)
        Cs[k] = best
    fit = stats.linregress(ns, Cs)
    tq = stats.t.ppf(0.975, len(ns) - 2)
    ci = (fit.slope - tq * fit.stderr, fit.slope + tq * fit.stderr)
    return TrendReport(float(p), float(qbar), ns, Cs, float(fit.slope), ci,
                       float(fit.intercept), {k: np.array(v) for k, v in members.items()})


# ------------------------------------------------------------------ random

def random_chain(rng: np.random.Generator, n: int, lo=0.01, hi=0.99, denom: int | None = None,
                 start: int | None = None) -> BDChain:
    """Random chain with q_i uniform in [lo, hi]; rational with ``denom`` if given."""
    if denom:
        a = math.ceil(Fraction(lo) * denom)
        b = math.floor(Fraction(hi) * denom)
        a, b = max(a, 1), min(b, denom - 1)
        q = tuple(Fraction(int(k), denom) for k in rng.integers(a, b + 1, size=n - 2))
    else:
        q = tuple(rng.uniform(float(lo), float(hi), size=n - 2))
    j = int(rng.integers(1, n + 1)) if start is None else start
    return BDChain(n, q, j)


def random_dominated_pair(rng: np.random.Generator, n: int, denom: int = 1000
                          ) -> tuple[BDChain, BDChain]:
    """Rational chains A, B on {1..n} with q^A <= q^B elementwise and a common start."""
    A = random_chain(rng, n, denom=denom)
    bump = rng.integers(0, denom // 5 + 1, size=n - 2)
    top = Fraction(denom - 1, denom)
    qB = tuple(min(a + Fraction(int(b), denom), top) for a, b in zip(A.q, bump))
    return A, BDChain(n, qB, A.start)

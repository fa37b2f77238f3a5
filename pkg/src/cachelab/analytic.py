"""Closed-form hit probabilities for the hazard-rate bound.

Poisson, on-off (three interchangeable forms), and Markov-modulated
traffic admit exact expressions for the hit probability and hit rate
achieved by always caching the objects with the largest instantaneous
request rates.  These serve as oracles for the Monte-Carlo scores in
:mod:`cachelab.bounds`.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import gammaln, logsumexp

from .traffic import Mmpp

__all__ = [
    "AnalyticResult",
    "OnOffRecursionTable",
    "poisson_hr",
    "onoff_hr_exact",
    "onoff_hr_common_rho",
    "onoff_recursion_table",
    "onoff_hr_recursive",
    "mmpp_hr",
]

# Direct binomial coefficients overflow well before this; switch to
# log-space evaluation for larger catalogs.
_LOG_BINOM_N = 50

_EXACT_MAX_N = 25


@dataclass(frozen=True)
class AnalyticResult:
    """Stationary hit probability and hit rate (hits per unit time)."""

    hit_prob: float
    hit_rate: float


@dataclass(frozen=True, eq=False)
class OnOffRecursionTable:
    """Occupancy distribution built object by object.

    Row ``l - 1`` describes a catalog restricted to the ``l`` most
    popular objects: ``occupancy[l - 1, k]`` is the probability that k
    of them are cached and ``cond_hit_rate[l - 1, k]`` the hit rate
    conditioned on that occupancy.  Entries beyond ``min(l, B)`` stay
    zero, so every row of ``occupancy`` sums to one.
    """

    occupancy: np.ndarray
    cond_hit_rate: np.ndarray

    @property
    def n(self) -> int:
        return self.occupancy.shape[0]


def _checked_rates(rates) -> np.ndarray:
    lam = np.asarray(rates, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("rates must be a non-empty 1-d array")
    if np.any(lam <= 0):
        raise ValueError("rates must be positive")
    return lam


def _checked_size(cache_size, n: int) -> int:
    b = int(cache_size)
    if b != cache_size or b < 0:
        raise ValueError("cache_size must be a non-negative integer")
    return min(b, n)


def _descending(lam: np.ndarray) -> np.ndarray:
    # Stable, so equal rates keep their id order.
    return np.argsort(-lam, kind="stable")


def _checked_on_prob(on_prob, n: int) -> np.ndarray:
    pi = np.asarray(on_prob, dtype=float)
    if pi.shape != (n,):
        raise ValueError("on_prob must match rates in length")
    if np.any(pi <= 0) or np.any(pi > 1):
        raise ValueError("on_prob entries must lie in (0, 1]")
    return pi


def poisson_hr(rates, cache_size: int) -> AnalyticResult:
    """Hit probability when the top-rate objects are cached permanently.

    With independent Poisson arrivals the largest hazards belong to the
    ``cache_size`` largest rates at every instant, so the bound reduces
    to the aggregate share of those rates.
    """
    lam = _checked_rates(rates)
    b = _checked_size(cache_size, lam.size)
    top = float(lam[_descending(lam)[:b]].sum())
    return AnalyticResult(hit_prob=top / float(lam.sum()), hit_rate=top)


def onoff_hr_exact(rates, on_prob, cache_size: int) -> AnalyticResult:
    """On-off hit probability by enumerating joint ON/OFF configurations.

    Object i (in decreasing-rate order) is served from the cache unless
    at least ``cache_size`` more popular objects are ON, so its hit
    probability is the sum over all smaller ON-sets of the more popular
    objects.  Enumeration grows combinatorially; catalogs above
    25 objects must use :func:`onoff_hr_recursive`.
    """
    lam = _checked_rates(rates)
    n = lam.size
    if n > _EXACT_MAX_N:
        raise ValueError(
            "subset enumeration is limited to 25 objects; "
            "use onoff_hr_recursive for larger catalogs"
        )
    pi = _checked_on_prob(on_prob, n)
    b = _checked_size(cache_size, n)
    order = _descending(lam)
    lam = lam[order]
    on = pi[order]
    off = 1.0 - on

    per_object = np.ones(n)
    for i in range(b + 1, n + 1):
        total = 0.0
        m = i - 1
        for k in range(b):
            for subset in combinations(range(m), k):
                sel = np.zeros(m, dtype=bool)
                sel[list(subset)] = True
                total += float(on[:m][sel].prod() * off[:m][~sel].prod())
        per_object[i - 1] = total

    weights = lam * on
    hit_prob = float(weights @ per_object / weights.sum())
    return AnalyticResult(hit_prob=hit_prob, hit_rate=hit_prob * float(weights.sum()))


def _binom_tail_factor(i: int, b: int, rho: float) -> float:
    """sum_{k<b} (rho/(1-rho))^k C(i-1, k), times (1-rho)^(i-1)."""
    ks = np.arange(b)
    if i - 1 > _LOG_BINOM_N:
        log_c = gammaln(i) - gammaln(ks + 1) - gammaln(i - ks)
        log_terms = (i - 1) * np.log1p(-rho) + ks * (np.log(rho) - np.log1p(-rho)) + log_c
        return float(np.exp(logsumexp(log_terms)))
    c = np.array([math.comb(i - 1, int(k)) for k in ks], dtype=float)
    return float((1.0 - rho) ** (i - 1) * ((rho / (1.0 - rho)) ** ks @ c))


def onoff_hr_common_rho(rates, rho: float, cache_size: int) -> AnalyticResult:
    """Binomial-sum form for on-off traffic with a common ON probability."""
    lam = _checked_rates(rates)
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    n = lam.size
    b = _checked_size(cache_size, n)
    lam = lam[_descending(lam)]
    total = float(lam.sum())

    h = float(lam[:b].sum()) / total
    for i in range(b + 1, n + 1):
        h += float(lam[i - 1]) * _binom_tail_factor(i, b, rho) / total
    return AnalyticResult(hit_prob=h, hit_rate=rho * total * h)


def onoff_recursion_table(rates, on_prob, cache_size: int) -> OnOffRecursionTable:
    """Build the occupancy/hit-rate recursion over a growing catalog.

    Objects are added in decreasing-rate order.  Adding object l either
    finds the cache below capacity (object l is cached whenever ON) or
    full (the more popular residents stay put), which yields first-order
    recursions in the occupancy count.  O(n * cache_size) time.
    """
    lam = _checked_rates(rates)
    n = lam.size
    pi = _checked_on_prob(on_prob, n)
    b = _checked_size(cache_size, n)
    order = _descending(lam)
    lam = lam[order]
    on = pi[order]
    off = 1.0 - on

    p = np.zeros((n, b + 1))
    r = np.zeros((n, b + 1))
    if b == 0:
        p[:, 0] = 1.0
        return OnOffRecursionTable(occupancy=p, cond_hit_rate=r)

    p[0, 0] = off[0]
    p[0, 1] = on[0]
    r[0, 1] = lam[0]
    for l in range(2, n + 1):
        li = l - 1
        pv, rv = p[li - 1], r[li - 1]
        p[li, 0] = pv[0] * off[li]
        for k in range(1, min(l, b)):
            num_p = pv[k - 1] * on[li]
            p[li, k] = num_p + pv[k] * off[li]
            if p[li, k] > 0.0:
                r[li, k] = (num_p * (rv[k - 1] + lam[li])
                            + pv[k] * off[li] * rv[k]) / p[li, k]
        if l <= b:
            p[li, l] = pv[l - 1] * on[li]
            r[li, l] = rv[l - 1] + lam[li]
        else:
            num_p = pv[b - 1] * on[li]
            # A full cache stays full no matter what object l does.
            p[li, b] = num_p + pv[b]
            if p[li, b] > 0.0:
                r[li, b] = (num_p * (rv[b - 1] + lam[li])
                            + pv[b] * rv[b]) / p[li, b]
    return OnOffRecursionTable(occupancy=p, cond_hit_rate=r)


def onoff_hr_recursive(rates, on_prob, cache_size: int) -> AnalyticResult:
    """On-off hit probability via the occupancy recursion."""
    table = onoff_recursion_table(rates, on_prob, cache_size)
    hit_rate = float(table.occupancy[-1] @ table.cond_hit_rate[-1])
    request_rate = float(np.asarray(rates, dtype=float) @ np.asarray(on_prob, dtype=float))
    return AnalyticResult(hit_prob=hit_rate / request_rate, hit_rate=hit_rate)


def mmpp_hr(model: Mmpp, cache_size: int) -> AnalyticResult:
    """Modulated-traffic hit probability, caching per-state top rates.

    Each environment state x contributes the share of its request rate
    covered by the ``cache_size`` largest per-object rates in x, weighted
    by the stationary distribution of the modulating chain.  The per-state
    shares match per-request frequencies exactly when the total request
    rate is state-independent.
    """
    n = model.n
    b = _checked_size(cache_size, n)
    lam = model.state_rates
    totals = lam.sum(axis=1)
    if np.any(totals <= 0):
        raise ValueError("every state needs a positive total request rate")
    order = np.argsort(-lam, axis=1, kind="stable")
    ranked = np.take_along_axis(lam, order, axis=1)
    top = ranked[:, :b].sum(axis=1)
    gamma = model.stationary()
    return AnalyticResult(hit_prob=float(gamma @ (top / totals)),
                          hit_rate=float(gamma @ top))

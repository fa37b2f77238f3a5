"""Hazard-rate upper bounds on hit probability, knapsack solvers, offline oracles.

The three bound scorers replay a trace and, at each request instant,
rank every object by its conditional request intensity (hazard) given
the history up to but excluding that instant:

* ``hr_e_score``: equal sizes; hit iff the requested object's hazard is
  among the top B, ties broken toward lower ids.
* ``hr_vb_score``: variable sizes, byte-hit bound; objects are packed
  greedily by hazard (fractional knapsack) and the request is credited
  with the packed fraction of its bytes.
* ``hr_vc_score``: variable sizes, object-hit bound; packing order is
  hazard/size and the marginal object is credited its expected fraction.

With all sizes equal to 1 the three scorers agree to the last bit.

Scoring runs in one of two modes: ``chunked`` (vectorized, production)
and ``naive`` (one full re-rank per event through the public knapsack
solver; the correctness reference for tests). Bélády replay and two
brute-force oracles complete the offline side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from cachelab.hazard import IrtDistribution
from cachelab.traffic import Catalog, Mmpp, OnOff, Renewal, RequestTrace, Snm

__all__ = [
    "BoundScore",
    "KnapsackSolution",
    "HazardTracker",
    "hr_e_score",
    "hr_vb_score",
    "hr_vc_score",
    "hr_scores",
    "solve_fractional_knapsack",
    "belady_score",
    "brute_force_offline_optimal",
    "brute_force_knapsack01",
]

# target elements per hazard chunk; keeps chunk matrices ~30 MB
_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class BoundScore:
    """Hit accounting over the post-warm-up part of a trace.

    ``expected_hits`` is real-valued because the object-hit bound
    credits the marginal object with a probability rather than a draw.
    """

    k: int
    expected_hits: float
    hit_prob: float
    expected_bytes: float
    byte_hit_prob: float

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.expected_hits < 0 or self.expected_hits > self.k * (1 + 1e-12):
            raise ValueError("expected_hits must lie in [0, k]")
        if not (0 <= self.hit_prob <= 1 + 1e-12 and 0 <= self.byte_hit_prob <= 1 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")

    @staticmethod
    def from_credits(k: int, hits: float, bytes_hit: float, bytes_seen: float) -> "BoundScore":
        return BoundScore(
            k,
            hits,
            hits / k if k else 0.0,
            bytes_hit,
            bytes_hit / bytes_seen if bytes_seen else 0.0,
        )


@dataclass(frozen=True)
class KnapsackSolution:
    """Greedy fractional-knapsack solution.

    ``order`` ranks objects by value/size descending (ties toward lower
    index); ``fractions`` are aligned to the original indexing; the
    first ``last_full`` objects of ``order`` are fully placed and the
    next, if any, receives fraction ``marginal``.
    """

    order: np.ndarray
    fractions: np.ndarray
    last_full: int
    marginal: float
    objective: float


def solve_fractional_knapsack(values, sizes, capacity: float) -> KnapsackSolution:
    """Greedy by value/size ratio; exact LP optimum of the relaxation.

    Capacity is met with equality whenever total size is at least the
    capacity. Ties in the ratio favor the lower object index.
    """
    v = np.asarray(values, dtype=float)
    s = np.asarray(sizes, dtype=float)
    if v.shape != s.shape or v.ndim != 1:
        raise ValueError("values and sizes must be 1-d arrays of equal length")
    if np.any(s <= 0):
        raise ValueError("sizes must be positive")
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    order = np.argsort(-(v / s), kind="stable")
    x = np.zeros(v.size)
    cap = float(capacity)
    a = 0
    marginal = 0.0
    for j in order:
        sj = float(s[j])
        if sj <= cap:
            x[j] = 1.0
            cap -= sj
            a += 1
        else:
            if cap > 0.0:
                marginal = cap / sj
                x[j] = marginal
            break
    return KnapsackSolution(order, x, a, marginal, float(np.dot(v, x)))


def brute_force_knapsack01(values, sizes, capacity: float) -> float:
    """Exact 0-1 knapsack optimum by subset enumeration (n <= 20)."""
    v = np.asarray(values, dtype=float)
    s = np.asarray(sizes, dtype=float)
    if v.size > 20:
        raise ValueError("instance too large for enumeration (n <= 20)")
    if np.any(s <= 0):
        raise ValueError("sizes must be positive")
    tot_v = np.zeros(1)
    tot_s = np.zeros(1)
    for vi, si in zip(v, s):
        tot_v = np.concatenate([tot_v, tot_v + vi])
        tot_s = np.concatenate([tot_s, tot_s + si])
    feasible = tot_s <= capacity
    return float(tot_v[feasible].max()) if feasible.any() else 0.0


class HazardTracker:
    """Per-object conditional intensity evaluated at request instants.

    Subclasses cover the traffic models: renewal hazards depend on the
    age since the object's last request (age measured from the trace
    start for never-requested objects); ON/OFF and MMPP hazards read the
    recorded environment state just before the instant; shot-noise
    hazards decay deterministically from birth. ``hazards_at``/
    ``observe`` walk one event at a time (reference mode); ``chunks``
    yields vectorized hazard matrices for consecutive trace slices.
    """

    kind = "base"

    def __init__(self, trace: RequestTrace, n: int):
        self.trace = trace
        self.n = n

    @staticmethod
    def for_trace(trace: RequestTrace, catalog: Catalog) -> "HazardTracker":
        model = catalog.traffic
        if trace.kind == "onoff" and isinstance(model, OnOff):
            return OnOffTracker(trace, model)
        if trace.kind == "mmpp" and isinstance(model, Mmpp):
            return MmppTracker(trace, model)
        if trace.kind == "snm" and isinstance(model, Snm):
            return SnmTracker(trace, model)
        if isinstance(model, Renewal):
            return RenewalTracker(trace, model)
        raise ValueError(
            f"no hazard evaluator for trace kind {trace.kind!r} with model {type(model).__name__}"
        )

    def hazards_at(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def observe(self, t: float, obj: int) -> None:
        """Record a request (1-based id) after scoring it."""

    def chunks(self, rows: Optional[int] = None):
        """Yield (start, stop, H) with H[r, i] the hazard of object i+1
        just before the request at trace index start+r."""
        raise NotImplementedError

    def _default_rows(self, rows: Optional[int]) -> int:
        return rows if rows else max(1, _CHUNK_ELEMS // max(self.n, 1))


class RenewalTracker(HazardTracker):
    kind = "renewal"

    def __init__(self, trace: RequestTrace, model: Renewal):
        super().__init__(trace, model.n)
        self.dists = model.dists
        self.last = np.zeros(model.n)
        # group objects by family so chunk evaluation is one vector
        # expression per family (bitwise equal to the scalar methods)
        groups: dict = {}
        for i, d in enumerate(model.dists):
            key = (type(d), tuple(sorted(d.__dataclass_fields__)))
            groups.setdefault(key, []).append(i)
        self._groups = []
        for (cls, fields), idx in groups.items():
            idx = np.asarray(idx, dtype=np.int64)
            params = [
                np.asarray([getattr(model.dists[i], f) for i in idx], dtype=float)
                for f in self._param_order(cls)
            ]
            self._groups.append((cls, idx, params))

    @staticmethod
    def _param_order(cls) -> tuple:
        import inspect

        sig = inspect.signature(cls.hazard_grid)
        return tuple(p for p in sig.parameters if p != "age")

    def hazards_at(self, t: float) -> np.ndarray:
        h = np.empty(self.n)
        for i, d in enumerate(self.dists):
            h[i] = d.hazard_rate(t - self.last[i])
        return h

    def observe(self, t: float, obj: int) -> None:
        self.last[obj - 1] = t

    def chunks(self, rows: Optional[int] = None):
        rows = self._default_rows(rows)
        times = self.trace.times
        ids0 = self.trace.ids - 1
        k = times.size
        for start in range(0, k, rows):
            stop = min(start + rows, k)
            c = stop - start
            t = times[start:stop]
            scatter = np.full((c, self.n), -np.inf)
            scatter[np.arange(c), ids0[start:stop]] = t
            running = np.maximum.accumulate(scatter, axis=0)
            prev = np.empty((c, self.n))
            prev[0] = self.last
            if c > 1:
                np.maximum(self.last, running[:-1], out=prev[1:])
            ages = t[:, None] - prev
            h = np.empty((c, self.n))
            for cls, idx, params in self._groups:
                h[:, idx] = cls.hazard_grid(ages[:, idx], *params)
            self.last = np.maximum(self.last, running[-1])
            yield start, stop, h


class OnOffTracker(HazardTracker):
    kind = "onoff"

    def __init__(self, trace: RequestTrace, model: OnOff):
        super().__init__(trace, model.n)
        if trace.onoff_switches is None or trace.onoff_initial is None:
            raise ValueError("trace lacks ON/OFF switch annotations")
        self.rates = model.on_rates
        self.switches = trace.onoff_switches
        self.initial = trace.onoff_initial

    def _on_state(self, i: int, t) -> np.ndarray:
        flips = np.searchsorted(self.switches[i], t, side="left")
        return (flips % 2 == 1) ^ self.initial[i]

    def hazards_at(self, t: float) -> np.ndarray:
        h = np.empty(self.n)
        for i in range(self.n):
            h[i] = np.where(self._on_state(i, t), self.rates[i], 0.0)
        return h

    def chunks(self, rows: Optional[int] = None):
        rows = self._default_rows(rows)
        times = self.trace.times
        k = times.size
        for start in range(0, k, rows):
            stop = min(start + rows, k)
            t = times[start:stop]
            h = np.empty((stop - start, self.n))
            for i in range(self.n):
                h[:, i] = np.where(self._on_state(i, t), self.rates[i], 0.0)
            yield start, stop, h


class MmppTracker(HazardTracker):
    kind = "mmpp"

    def __init__(self, trace: RequestTrace, model: Mmpp):
        super().__init__(trace, model.n)
        if trace.state_times is None or trace.state_ids is None:
            raise ValueError("trace lacks an MMPP state path")
        self.state_rates = model.state_rates
        self.path_t = trace.state_times
        self.path_x = trace.state_ids

    def _state_before(self, t):
        # state just before t: jumps at exactly t do not count
        idx = np.searchsorted(self.path_t, t, side="left") - 1
        return self.path_x[np.maximum(idx, 0)]

    def hazards_at(self, t: float) -> np.ndarray:
        return self.state_rates[int(self._state_before(t))].copy()

    def chunks(self, rows: Optional[int] = None):
        rows = self._default_rows(rows)
        times = self.trace.times
        k = times.size
        for start in range(0, k, rows):
            stop = min(start + rows, k)
            states = self._state_before(times[start:stop])
            yield start, stop, self.state_rates[states]


class SnmTracker(HazardTracker):
    kind = "snm"

    def __init__(self, trace: RequestTrace, model: Snm):
        super().__init__(trace, model.n)
        if trace.birth_times is None or trace.shot_counts is None:
            raise ValueError("trace lacks shot-noise birth annotations")
        alpha = model.decay[model.object_class()]
        self.births = trace.birth_times
        self.decay = alpha
        self.amp = trace.shot_counts / alpha

    def hazards_at(self, t: float) -> np.ndarray:
        dt = t - self.births
        return np.where(dt >= 0, self.amp * np.exp(-np.maximum(dt, 0.0) / self.decay), 0.0)

    def chunks(self, rows: Optional[int] = None):
        rows = self._default_rows(rows)
        times = self.trace.times
        k = times.size
        for start in range(0, k, rows):
            stop = min(start + rows, k)
            dt = times[start:stop, None] - self.births[None, :]
            h = np.where(dt >= 0, self.amp * np.exp(-np.maximum(dt, 0.0) / self.decay), 0.0)
            yield start, stop, h


def _validate_b(b_values, kind: str, n: int):
    for b in b_values:
        if kind == "equal":
            if not float(b).is_integer() or b < 0:
                raise ValueError("cache size must be a non-negative integer object count")
            if b > n:
                raise ValueError(f"cache size {b} exceeds catalog size {n}")
        elif b < 0:
            raise ValueError("cache capacity must be >= 0")


def _warm_index(k: int, warmup_frac: float) -> int:
    if not 0 <= warmup_frac < 1:
        raise ValueError("warmup_frac must be in [0, 1)")
    return int(math.floor(k * warmup_frac))


def hr_scores(trace: RequestTrace, catalog: Catalog, b_values, kind: str = "equal",
              warmup_frac: float = 0.0, mode: str = "chunked") -> dict:
    """Score one hazard bound for several cache sizes in a single pass.

    ``kind`` selects the ranking: "equal" (top-B count, equal sizes),
    "byte" (pack by hazard), or "object" (pack by hazard/size). Returns
    {B: BoundScore}.
    """
    if kind not in ("equal", "byte", "object"):
        raise ValueError(f"unknown bound kind {kind!r}")
    if mode not in ("chunked", "naive"):
        raise ValueError(f"unknown mode {mode!r}")
    b_list = list(b_values)
    _validate_b(b_list, kind, catalog.n)
    if kind == "equal" and not catalog.equal_sizes():
        raise ValueError("equal-size bound requires a uniform-size catalog")

    k = trace.k
    warm = _warm_index(k, warmup_frac)
    k_post = k - warm
    hits = {b: 0.0 for b in b_list}
    bytes_hit = {b: 0.0 for b in b_list}

    # the denominator accumulates alongside the credits so that a credit
    # of 1.0 everywhere yields a byte-hit probability of exactly 1.0
    if mode == "naive":
        bytes_seen = _score_naive(trace, catalog, b_list, kind, warm, hits, bytes_hit)
    else:
        bytes_seen = _score_chunked(trace, catalog, b_list, kind, warm, hits, bytes_hit)

    return {
        b: BoundScore.from_credits(k_post, hits[b], bytes_hit[b], bytes_seen)
        for b in b_list
    }


def _score_chunked(trace, catalog, b_list, kind, warm, hits, bytes_hit):
    tracker = HazardTracker.for_trace(trace, catalog)
    sizes = catalog.sizes
    ids0 = trace.ids - 1
    col_ids = np.arange(catalog.n)
    bytes_seen = 0.0
    for start, stop, h in tracker.chunks():
        c = stop - start
        rows = np.arange(c)
        req = ids0[start:stop]
        live = rows + start >= warm
        if not live.any():
            continue
        s_req = sizes[req]
        ones = np.where(live, 1.0, 0.0)
        bytes_seen += float((s_req * ones).sum())
        if kind == "equal":
            own = h[rows, req]
            rank = (h > own[:, None]).sum(axis=1)
            rank += ((h == own[:, None]) & (col_ids < req[:, None])).sum(axis=1)
            for b in b_list:
                credit = np.where((rank < b) & live, 1.0, 0.0)
                hits[b] += float(credit.sum())
                bytes_hit[b] += float((s_req * credit).sum())
        else:
            key = h if kind == "byte" else h / sizes[None, :]
            order = np.argsort(-key, axis=1, kind="stable")
            csize = np.cumsum(sizes[order], axis=1)
            pos = (order == req[:, None]).argmax(axis=1)
            before = csize[rows, pos] - s_req
            for b in b_list:
                credit = np.where(
                    before + s_req <= b,
                    1.0,
                    np.where(before < b, (b - before) / s_req, 0.0),
                )
                credit[~live] = 0.0
                hits[b] += float(credit.sum())
                bytes_hit[b] += float((s_req * credit).sum())
    return bytes_seen


def _score_naive(trace, catalog, b_list, kind, warm, hits, bytes_hit):
    tracker = HazardTracker.for_trace(trace, catalog)
    sizes = catalog.sizes
    bytes_seen = 0.0
    for idx in range(trace.k):
        t = trace.times[idx]
        r = int(trace.ids[idx]) - 1
        h = tracker.hazards_at(t)
        if idx >= warm:
            s_r = float(sizes[r])
            bytes_seen += s_r
            if kind == "equal":
                rank = int(np.count_nonzero(h > h[r]))
                rank += int(np.count_nonzero((h == h[r]) & (np.arange(catalog.n) < r)))
                for b in b_list:
                    if rank < b:
                        hits[b] += 1.0
                        bytes_hit[b] += s_r
            else:
                values = sizes * h if kind == "byte" else h
                for b in b_list:
                    sol = solve_fractional_knapsack(values, sizes, b)
                    x = float(sol.fractions[r])
                    hits[b] += x
                    bytes_hit[b] += s_r * x
        tracker.observe(t, r + 1)
    return bytes_seen


def hr_e_score(trace: RequestTrace, catalog: Catalog, cache_size: int,
               warmup_frac: float = 0.0, mode: str = "chunked") -> BoundScore:
    """Equal-size hazard bound: hit iff the request ranks in the top B hazards."""
    return hr_scores(trace, catalog, [cache_size], "equal", warmup_frac, mode)[cache_size]


def hr_vb_score(trace: RequestTrace, catalog: Catalog, capacity: float,
                warmup_frac: float = 0.0, mode: str = "chunked") -> BoundScore:
    """Byte-hit hazard bound: greedy packing by hazard, fractional last object."""
    return hr_scores(trace, catalog, [capacity], "byte", warmup_frac, mode)[capacity]


def hr_vc_score(trace: RequestTrace, catalog: Catalog, capacity: float,
                warmup_frac: float = 0.0, mode: str = "chunked") -> BoundScore:
    """Object-hit hazard bound: packing by hazard/size, marginal object credited
    with its placement probability."""
    return hr_scores(trace, catalog, [capacity], "object", warmup_frac, mode)[capacity]


def belady_score(trace: RequestTrace, cache_size: int,
                 warmup_frac: float = 0.0) -> BoundScore:
    """Offline optimal replay for equal-size objects (MIN with bypass).

    On a miss with a full cache the victim is the object, among the
    cached ones plus the incoming one, whose next request lies farthest
    in the future (never-requested-again counts as infinity; ties go to
    the lowest id). Evicting the incoming object means bypassing.
    """
    if not float(cache_size).is_integer() or cache_size < 0:
        raise ValueError("cache size must be a non-negative integer")
    b = int(cache_size)
    ids = trace.ids
    k = trace.k
    warm = _warm_index(k, warmup_frac)

    next_use = np.empty(k, dtype=np.int64)
    seen: dict = {}
    sentinel = np.iinfo(np.int64).max
    for i in range(k - 1, -1, -1):
        next_use[i] = seen.get(ids[i], sentinel)
        seen[ids[i]] = i

    cache: dict = {}  # id -> index of its next request
    hits = 0
    for i in range(k):
        r = int(ids[i])
        if r in cache:
            if i >= warm:
                hits += 1
            cache[r] = next_use[i]
        elif b > 0:
            if len(cache) < b:
                cache[r] = next_use[i]
            else:
                victim, far = r, next_use[i]
                for obj, nxt in cache.items():
                    if nxt > far or (nxt == far and obj < victim):
                        victim, far = obj, nxt
                if victim != r:
                    del cache[victim]
                    cache[r] = next_use[i]
    k_post = k - warm
    return BoundScore.from_credits(k_post, float(hits), float(hits), float(k_post))


def brute_force_offline_optimal(trace: RequestTrace, cache_size: int) -> int:
    """Maximum achievable hits over every on-demand admission/eviction plan.

    Exhaustive (memoized) search; only for tiny instances (K <= 16, n <= 6).
    """
    if trace.k > 16 or trace.n > 6:
        raise ValueError("instance too large for exhaustive search (K <= 16, n <= 6)")
    b = int(cache_size)
    ids = tuple(int(i) for i in trace.ids)
    k = len(ids)
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def best(i: int, cache: frozenset) -> int:
        if i == k:
            return 0
        r = ids[i]
        if r in cache:
            return 1 + best(i + 1, cache)
        if b == 0:
            return best(i + 1, cache)
        out = best(i + 1, cache)  # bypass
        if len(cache) < b:
            out = max(out, best(i + 1, cache | {r}))
        else:
            for v in cache:
                out = max(out, best(i + 1, (cache - {v}) | {r}))
        return out

    return best(0, frozenset())

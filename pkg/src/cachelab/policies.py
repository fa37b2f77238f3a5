"""Online cache replacement policies replayed request by request.

All policies are on-demand: the cache changes only when the requested
object misses, by admitting it (unless it cannot or should not fit) and
evicting per policy order until it fits. Hits are counted against the
cache state just before each request. Every policy is deterministic
given the seed; only RANDOM consumes randomness.

Variable sizes are supported by LRU, FIFO, RANDOM, GDSF (evict until the
object fits; an object larger than the whole cache is never admitted)
and STATIC (greedy prefix of the rate ordering until capacity). LFU is
defined here for equal sizes only.
"""

from __future__ import annotations

import heapq
from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from cachelab.bounds import BoundScore, _warm_index
from cachelab.traffic import Catalog, RequestTrace

__all__ = ["POLICY_KINDS", "PolicySpec", "CacheState", "simulate_policy", "gdsf_priority"]

POLICY_KINDS = ("lru", "fifo", "random", "static", "lfu", "gdsf")


@dataclass(frozen=True)
class PolicySpec:
    """Which policy to run; STATIC additionally needs the per-object rates."""

    kind: str
    rates: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.kind == "static" and self.rates is None:
            raise ValueError("static policy needs a rate vector")


@dataclass
class CacheState:
    """Final cache contents and bookkeeping returned for inspection."""

    cached: set
    used: float
    frequency: dict
    clock: float


def gdsf_priority(frequency: float, size: float, clock: float) -> float:
    """Greedy-Dual-Size-Frequency priority H = clock + frequency / size."""
    if size <= 0:
        raise ValueError("size must be positive")
    return clock + frequency / size


class _Recorder:
    """Accumulates hits and, when asked, pre-update cache snapshots."""

    __slots__ = ("warm", "hits", "bytes_hit", "contents")

    def __init__(self, warm: int, keep_contents: bool):
        self.warm = warm
        self.hits = 0
        self.bytes_hit = 0.0
        self.contents = [] if keep_contents else None


def simulate_policy(trace: RequestTrace, catalog: Catalog, spec: PolicySpec,
                    cache_size: float, seed: int = 0, warmup_frac: float = 0.0,
                    return_state: bool = False, return_contents: bool = False):
    """Replay the trace under a policy and score its hits.

    Returns a BoundScore; with ``return_state`` also the final
    CacheState, and with ``return_contents`` a list of the cached-id
    frozensets observed just before each request (meant for small
    traces).
    """
    if cache_size < 0:
        raise ValueError("cache size must be >= 0")
    sizes = catalog.sizes
    if spec.kind == "lfu" and not catalog.equal_sizes():
        raise ValueError("lfu supports equal sizes only")
    k = trace.k
    warm = _warm_index(k, warmup_frac)
    rec = _Recorder(warm, return_contents)
    ids = trace.ids.tolist()
    size_of = sizes.tolist()

    if spec.kind == "static":
        state = _run_static(trace, catalog, spec, cache_size, rec)
    else:
        runner = {
            "lru": _run_lru,
            "fifo": _run_fifo,
            "random": _run_random,
            "lfu": _run_lfu,
            "gdsf": _run_gdsf,
        }[spec.kind]
        state = runner(ids, size_of, cache_size, seed, rec)

    k_post = k - warm
    bytes_seen = float(sizes[trace.ids[warm:] - 1].sum())
    score = BoundScore.from_credits(k_post, float(rec.hits), rec.bytes_hit, bytes_seen)
    out = [score]
    if return_state:
        out.append(state)
    if return_contents:
        out.append(rec.contents)
    return score if len(out) == 1 else tuple(out)


def _run_static(trace, catalog, spec, capacity, rec):
    rates = np.asarray(spec.rates, dtype=float)
    if rates.size != catalog.n:
        raise ValueError("static rate vector length must match the catalog")
    order = np.argsort(-rates, kind="stable")
    sizes = catalog.sizes
    csum = np.cumsum(sizes[order])
    prefix = int(np.searchsorted(csum, capacity, side="right"))
    kept = order[:prefix] + 1  # maximal prefix of the rate ranking that fits
    member = np.zeros(catalog.n + 1, dtype=bool)
    member[kept] = True
    used = float(sizes[kept - 1].sum())

    hit_mask = member[trace.ids]
    live = hit_mask[rec.warm:]
    rec.hits = int(np.count_nonzero(live))
    rec.bytes_hit = float(sizes[trace.ids[rec.warm:] - 1][live].sum())
    if rec.contents is not None:
        frozen = frozenset(int(i) for i in kept)
        rec.contents = [frozen] * trace.k
    return CacheState(set(int(i) for i in kept), used, {}, 0.0)


def _run_lru(ids, size_of, capacity, seed, rec):
    cache = OrderedDict()
    used = 0.0
    warm, contents = rec.warm, rec.contents
    hits = 0
    bytes_hit = 0.0
    for idx, r in enumerate(ids):
        if contents is not None:
            contents.append(frozenset(cache))
        s = size_of[r - 1]
        if r in cache:
            cache.move_to_end(r)
            if idx >= warm:
                hits += 1
                bytes_hit += s
        elif s <= capacity:
            while used + s > capacity:
                _, vs = cache.popitem(last=False)
                used -= vs
            cache[r] = s
            used += s
    rec.hits, rec.bytes_hit = hits, bytes_hit
    return CacheState(set(cache), used, {}, 0.0)


def _run_fifo(ids, size_of, capacity, seed, rec):
    queue = deque()
    cached = {}
    used = 0.0
    warm, contents = rec.warm, rec.contents
    hits = 0
    bytes_hit = 0.0
    for idx, r in enumerate(ids):
        if contents is not None:
            contents.append(frozenset(cached))
        s = size_of[r - 1]
        if r in cached:
            if idx >= warm:
                hits += 1
                bytes_hit += s
        elif s <= capacity:
            while used + s > capacity:
                v = queue.popleft()
                used -= cached.pop(v)
            queue.append(r)
            cached[r] = s
            used += s
    rec.hits, rec.bytes_hit = hits, bytes_hit
    return CacheState(set(cached), used, {}, 0.0)


def _run_random(ids, size_of, capacity, seed, rec):
    rng = np.random.default_rng(seed)
    pool = rng.random(max(len(ids), 1024)).tolist()
    draw = iter(pool).__next__
    arr = []  # cached ids, unordered
    pos = {}
    used = 0.0
    warm, contents = rec.warm, rec.contents
    hits = 0
    bytes_hit = 0.0
    for idx, r in enumerate(ids):
        if contents is not None:
            contents.append(frozenset(arr))
        s = size_of[r - 1]
        if r in pos:
            if idx >= warm:
                hits += 1
                bytes_hit += s
        elif s <= capacity:
            while used + s > capacity:
                try:
                    u = draw()
                except StopIteration:
                    pool = rng.random(1024).tolist()
                    draw = iter(pool).__next__
                    u = draw()
                j = int(u * len(arr))
                v = arr[j]
                last = arr.pop()
                if last != v:
                    arr[j] = last
                    pos[last] = j
                del pos[v]
                used -= size_of[v - 1]
            pos[r] = len(arr)
            arr.append(r)
            used += s
    rec.hits, rec.bytes_hit = hits, bytes_hit
    return CacheState(set(arr), used, {}, 0.0)


def _run_lfu(ids, size_of, capacity, seed, rec):
    b = int(capacity)
    counts = {}  # persists across evictions
    stamp = {}
    cached = set()
    heap = []  # (count, last-use stamp, id); stale entries skipped on pop
    warm, contents = rec.warm, rec.contents
    hits = 0
    bytes_hit = 0.0
    for idx, r in enumerate(ids):
        if contents is not None:
            contents.append(frozenset(cached))
        counts[r] = counts.get(r, 0) + 1
        stamp[r] = idx
        if r in cached:
            heapq.heappush(heap, (counts[r], idx, r))
            if idx >= warm:
                hits += 1
                bytes_hit += size_of[r - 1]
        elif b > 0:
            if len(cached) >= b:
                while True:
                    c, st, v = heapq.heappop(heap)
                    if v in cached and counts[v] == c and stamp[v] == st:
                        cached.remove(v)
                        break
            cached.add(r)
            heapq.heappush(heap, (counts[r], idx, r))
    rec.hits, rec.bytes_hit = hits, bytes_hit
    return CacheState(cached, float(len(cached)), counts, 0.0)


def _run_gdsf(ids, size_of, capacity, seed, rec):
    clock = 0.0
    freq = {}  # cached objects only; resets on eviction
    prio = {}
    cached = set()
    used = 0.0
    heap = []  # (H, id); stale entries skipped on pop
    warm, contents = rec.warm, rec.contents
    hits = 0
    bytes_hit = 0.0
    for idx, r in enumerate(ids):
        if contents is not None:
            contents.append(frozenset(cached))
        s = size_of[r - 1]
        if r in cached:
            freq[r] += 1
            h = gdsf_priority(freq[r], s, clock)
            prio[r] = h
            heapq.heappush(heap, (h, r))
            if idx >= warm:
                hits += 1
                bytes_hit += s
        elif s <= capacity:
            while used + s > capacity:
                h, v = heapq.heappop(heap)
                if v in cached and prio[v] == h:
                    cached.remove(v)
                    used -= size_of[v - 1]
                    del freq[v]
                    del prio[v]
                    clock = h
            cached.add(r)
            used += s
            freq[r] = 1
            h = gdsf_priority(1, s, clock)
            prio[r] = h
            heapq.heappush(heap, (h, r))
    rec.hits, rec.bytes_hit = hits, bytes_hit
    return CacheState(cached, used, freq, clock)

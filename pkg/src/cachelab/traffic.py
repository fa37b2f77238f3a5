"""Request traffic models and trace generation.

Four stationary-ish traffic models produce timestamped request traces
over a fixed object catalog:

* ``Renewal``: each object requests on its own renewal process.
* ``OnOff``: each object alternates exponential ON/OFF phases and emits
  Poisson requests only while ON.
* ``Mmpp``: one Markov chain modulates every object's Poisson rate.
* ``Snm``: objects are born over time and emit a Poisson shot of
  requests whose intensity decays exponentially after birth.

All randomness is drawn from substreams keyed by (seed, role, index) so
adding objects, changing the horizon, or reordering generation does not
perturb any other object's stream. Traces carry enough model state
(switch epochs, chain path, births) for scorers to reconstruct the
exact conditional intensity at any request instant.

Traces are exchanged as CSV with columns ``timestamp,object_id[,size]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from cachelab.hazard import IrtDistribution

__all__ = [
    "TraceFormatError",
    "Renewal",
    "OnOff",
    "Mmpp",
    "Snm",
    "TrafficModel",
    "Catalog",
    "RequestTrace",
    "LoadedTrace",
    "gen_renewal",
    "gen_onoff",
    "gen_mmpp",
    "gen_snm",
    "generate_trace",
    "generate_request_count",
    "write_trace_csv",
    "load_trace_csv",
    "sample_sizes_bounded_pareto",
]

# substream roles
_CHAIN, _OBJECT, _CLASS, _SIZES = 0, 1, 2, 3

# exponential-decay constant per unit mean lifespan for shot-noise classes
SNM_DECAY_PER_LIFESPAN = 0.5 / 0.8

_TIE_STEP = 1e-12


class TraceFormatError(ValueError):
    """A trace CSV line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class Renewal:
    """Independent per-object renewal request processes."""

    dists: tuple[IrtDistribution, ...]

    @property
    def n(self) -> int:
        return len(self.dists)

    def mean_rates(self) -> np.ndarray:
        return np.array([d.rate() for d in self.dists])


@dataclass(frozen=True, eq=False)
class OnOff:
    """Exponential ON/OFF phases; Poisson requests at ``on_rates`` while ON.

    ``off_to_on`` and ``on_to_off`` are the phase switch rates (so mean
    OFF time is 1/off_to_on and mean ON time is 1/on_to_off).
    """

    off_to_on: np.ndarray
    on_to_off: np.ndarray
    on_rates: np.ndarray

    def __post_init__(self):
        a = np.broadcast_to(np.asarray(self.off_to_on, dtype=float), np.shape(self.on_rates))
        b = np.broadcast_to(np.asarray(self.on_to_off, dtype=float), np.shape(self.on_rates))
        object.__setattr__(self, "off_to_on", a.copy())
        object.__setattr__(self, "on_to_off", b.copy())
        object.__setattr__(self, "on_rates", np.asarray(self.on_rates, dtype=float).copy())
        if np.any(self.off_to_on <= 0) or np.any(self.on_to_off <= 0):
            raise ValueError("switch rates must be positive")
        if np.any(self.on_rates <= 0):
            raise ValueError("on_rates must be positive")

    @property
    def n(self) -> int:
        return self.on_rates.size

    @property
    def on_prob(self) -> np.ndarray:
        return self.off_to_on / (self.off_to_on + self.on_to_off)

    def mean_rates(self) -> np.ndarray:
        return self.on_rates * self.on_prob


@dataclass(frozen=True, eq=False)
class Mmpp:
    """Markov-modulated Poisson process shared by all objects.

    ``generator`` is the m x m chain generator (rows sum to zero);
    ``state_rates[x, i]`` is object i's Poisson rate while the chain is
    in state x.
    """

    generator: np.ndarray
    state_rates: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.generator, dtype=float)
        lam = np.asarray(self.state_rates, dtype=float)
        object.__setattr__(self, "generator", q.copy())
        object.__setattr__(self, "state_rates", lam.copy())
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("generator must be square")
        if not np.allclose(q.sum(axis=1), 0.0, atol=1e-10):
            raise ValueError("generator rows must sum to zero")
        if np.any(q - np.diag(np.diag(q)) < 0) or np.any(np.diag(q) > 0):
            raise ValueError("generator off-diagonals must be >= 0 and diagonals <= 0")
        if lam.ndim != 2 or lam.shape[0] != q.shape[0]:
            raise ValueError("state_rates must be (num_states, n)")
        if np.any(lam < 0):
            raise ValueError("state_rates must be non-negative")

    @classmethod
    def two_state(cls, rate_12: float, rate_21: float, rates_1, rates_2) -> "Mmpp":
        q = np.array([[-rate_12, rate_12], [rate_21, -rate_21]], dtype=float)
        return cls(q, np.vstack([rates_1, rates_2]))

    @property
    def n(self) -> int:
        return self.state_rates.shape[1]

    @property
    def num_states(self) -> int:
        return self.generator.shape[0]

    def stationary(self) -> np.ndarray:
        """Stationary distribution of the modulating chain."""
        m = self.num_states
        a = np.vstack([self.generator.T, np.ones(m)])
        b = np.zeros(m + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        return np.maximum(pi, 0.0) / np.maximum(pi, 0.0).sum()

    def mean_rates(self) -> np.ndarray:
        return self.stationary() @ self.state_rates


@dataclass(frozen=True, eq=False)
class Snm:
    """Shot-noise model: per-class birth processes with decaying request shots.

    Class c has ``class_sizes[c]`` objects born by a Poisson process of
    rate ``mean_requests[c] / mean_lifespans[c]`` each; object i of the
    class draws a volume V ~ Poisson(mean_requests[c]) and then emits
    requests at intensity (V / decay) * exp(-(t - birth) / decay) with
    decay = 0.625 * mean_lifespans[c].
    """

    mean_lifespans: np.ndarray
    mean_requests: np.ndarray
    class_sizes: np.ndarray

    def __post_init__(self):
        ls = np.asarray(self.mean_lifespans, dtype=float)
        vs = np.asarray(self.mean_requests, dtype=float)
        ns = np.asarray(self.class_sizes, dtype=np.int64)
        object.__setattr__(self, "mean_lifespans", ls.copy())
        object.__setattr__(self, "mean_requests", vs.copy())
        object.__setattr__(self, "class_sizes", ns.copy())
        if not (ls.shape == vs.shape == ns.shape) or ls.ndim != 1:
            raise ValueError("class parameter arrays must be 1-d and same length")
        if np.any(ls <= 0) or np.any(vs <= 0) or np.any(ns < 1):
            raise ValueError("class parameters must be positive")

    @property
    def n(self) -> int:
        return int(self.class_sizes.sum())

    @property
    def num_classes(self) -> int:
        return self.class_sizes.size

    @property
    def decay(self) -> np.ndarray:
        return SNM_DECAY_PER_LIFESPAN * self.mean_lifespans

    @property
    def birth_rates(self) -> np.ndarray:
        return self.mean_requests / self.mean_lifespans

    def object_class(self) -> np.ndarray:
        """Class index of each object id 1..n, classes laid out consecutively."""
        return np.repeat(np.arange(self.num_classes), self.class_sizes)

    def expected_counts(self, birth_times: np.ndarray, shot_counts: np.ndarray,
                        horizon: float) -> np.ndarray:
        """E[#requests | birth, volume] per object over [0, horizon]."""
        alpha = self.decay[self.object_class()]
        dt = np.maximum(horizon - birth_times, 0.0)
        return shot_counts * -np.expm1(-dt / alpha)


TrafficModel = Union[Renewal, OnOff, Mmpp, Snm]


@dataclass(eq=False)
class Catalog:
    """Object population: per-object sizes plus an optional traffic model."""

    sizes: np.ndarray
    traffic: Optional[TrafficModel] = None

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=float)
        if self.sizes.ndim != 1 or self.sizes.size == 0:
            raise ValueError("sizes must be a non-empty 1-d array")
        if not np.all(np.isfinite(self.sizes)) or np.any(self.sizes <= 0):
            raise ValueError("sizes must be positive and finite")
        if self.traffic is not None and self.traffic.n != self.sizes.size:
            raise ValueError(
                f"traffic model has {self.traffic.n} objects, sizes has {self.sizes.size}"
            )

    @property
    def n(self) -> int:
        return self.sizes.size

    def equal_sizes(self) -> bool:
        return bool(np.all(self.sizes == self.sizes[0]))


@dataclass(eq=False)
class RequestTrace:
    """A timestamped request sequence over objects 1..n.

    ``times`` is strictly increasing; ``ids`` holds 1-based object ids.
    Model-specific fields let hazard evaluators reconstruct conditional
    intensities: ON/OFF switch epochs per object, the MMPP state path,
    or SNM birth times and shot volumes.
    """

    times: np.ndarray
    ids: np.ndarray
    n: int
    horizon: float
    kind: str = "trace"
    onoff_initial: Optional[np.ndarray] = None
    onoff_switches: Optional[tuple] = None
    state_times: Optional[np.ndarray] = None
    state_ids: Optional[np.ndarray] = None
    birth_times: Optional[np.ndarray] = None
    shot_counts: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.times.shape != self.ids.shape or self.times.ndim != 1:
            raise ValueError("times and ids must be 1-d arrays of equal length")
        if not np.all(np.isfinite(self.times)):
            raise ValueError("times must be finite")
        if self.times.size and (self.times[0] < 0 or np.any(np.diff(self.times) <= 0)):
            raise ValueError("times must be non-negative and strictly increasing")
        if self.times.size and (self.ids.min() < 1 or self.ids.max() > self.n):
            raise ValueError("ids must lie in 1..n")

    @property
    def k(self) -> int:
        return self.times.size

    def head(self, count: int) -> "RequestTrace":
        """First ``count`` requests, annotations carried over."""
        return RequestTrace(
            self.times[:count], self.ids[:count], self.n, self.horizon, self.kind,
            self.onoff_initial, self.onoff_switches, self.state_times, self.state_ids,
            self.birth_times, self.shot_counts,
        )


def _canonical_order(times: np.ndarray, ids: np.ndarray):
    """Sort by time with ties broken by object id, then separate exact ties.

    Tied timestamps are stepped forward by 1e-12 (or one ulp if larger)
    so the strict-increase invariant holds without reordering.
    """
    order = np.lexsort((ids, times))
    t = times[order].copy()
    i = ids[order]
    if t.size > 1:
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            for k in range(bad[0] + 1, t.size):
                if t[k] <= t[k - 1]:
                    stepped = t[k - 1] + _TIE_STEP
                    t[k] = stepped if stepped > t[k - 1] else np.nextafter(t[k - 1], np.inf)
    return t, i


def _renewal_arrivals(dist: IrtDistribution, horizon: float,
                      rng: np.random.Generator) -> np.ndarray:
    est = max(16, int(horizon / dist.mean_irt() * 1.2) + 8)
    chunks = []
    t = 0.0
    while True:
        gaps = np.asarray(dist.sample(rng, est), dtype=float)
        ts = t + np.cumsum(gaps)
        cut = int(np.searchsorted(ts, horizon, side="left"))
        if cut < ts.size:
            chunks.append(ts[:cut])
            break
        chunks.append(ts)
        t = float(ts[-1])
        est = max(16, est // 4)
    return np.concatenate(chunks) if len(chunks) > 1 else chunks[0]


def gen_renewal(catalog: Catalog, horizon: float, seed: int) -> RequestTrace:
    """Superpose per-object renewal processes over [0, horizon)."""
    model = catalog.traffic
    if not isinstance(model, Renewal):
        raise TypeError("catalog.traffic must be a Renewal model")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    all_times, all_ids = [], []
    for i, dist in enumerate(model.dists, start=1):
        ts = _renewal_arrivals(dist, horizon, _rng(seed, _OBJECT, i))
        all_times.append(ts)
        all_ids.append(np.full(ts.size, i, dtype=np.int64))
    t, ids = _canonical_order(np.concatenate(all_times), np.concatenate(all_ids))
    return RequestTrace(t, ids, catalog.n, horizon, kind="renewal")


def gen_onoff(catalog: Catalog, horizon: float, seed: int) -> RequestTrace:
    """ON/OFF phase traffic; requests occur only inside ON intervals."""
    model = catalog.traffic
    if not isinstance(model, OnOff):
        raise TypeError("catalog.traffic must be an OnOff model")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    pi_on = model.on_prob
    all_times, all_ids, switches, initial = [], [], [], np.zeros(catalog.n, dtype=bool)
    for i in range(1, catalog.n + 1):
        rng = _rng(seed, _OBJECT, i)
        alpha = float(model.off_to_on[i - 1])
        beta = float(model.on_to_off[i - 1])
        lam = float(model.on_rates[i - 1])
        on = bool(rng.random() < pi_on[i - 1])
        initial[i - 1] = on
        sw, req = [], []
        t = 0.0
        while t < horizon:
            if on:
                dur = rng.exponential(1.0 / beta)
                end = min(t + dur, horizon)
                m = int(rng.poisson(lam * (end - t)))
                if m:
                    # u in (0,1]: a request never lands on its own ON-switch epoch
                    u = 1.0 - rng.random(m)
                    req.append(t + np.sort(u) * (end - t))
            else:
                dur = rng.exponential(1.0 / alpha)
            t += dur
            if t < horizon:
                sw.append(t)
            on = not on
        ts = np.concatenate(req) if req else np.empty(0)
        ts = ts[ts < horizon]
        all_times.append(ts)
        all_ids.append(np.full(ts.size, i, dtype=np.int64))
        switches.append(np.asarray(sw))
    t, ids = _canonical_order(np.concatenate(all_times), np.concatenate(all_ids))
    return RequestTrace(t, ids, catalog.n, horizon, kind="onoff",
                        onoff_initial=initial, onoff_switches=tuple(switches))


def _mmpp_path(model: Mmpp, horizon: float, rng: np.random.Generator):
    q = model.generator
    m = model.num_states
    gamma = model.stationary()
    x = int(rng.choice(m, p=gamma))
    times, states = [0.0], [x]
    t = 0.0
    while True:
        out = -q[x, x]
        if out == 0.0:
            break
        t += rng.exponential(1.0 / out)
        if t >= horizon:
            break
        probs = q[x].copy()
        probs[x] = 0.0
        probs /= out
        x = int(rng.choice(m, p=probs))
        times.append(t)
        states.append(x)
    return np.asarray(times), np.asarray(states, dtype=np.int64)


def gen_mmpp(catalog: Catalog, horizon: float, seed: int) -> RequestTrace:
    """Markov-modulated Poisson traffic with a shared state path."""
    model = catalog.traffic
    if not isinstance(model, Mmpp):
        raise TypeError("catalog.traffic must be an Mmpp model")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    path_t, path_x = _mmpp_path(model, horizon, _rng(seed, _CHAIN))
    starts = path_t
    durs = np.diff(np.append(path_t, horizon))
    all_times, all_ids = [], []
    for i in range(1, catalog.n + 1):
        rng = _rng(seed, _OBJECT, i)
        lam = model.state_rates[path_x, i - 1]
        counts = rng.poisson(lam * durs)
        total = int(counts.sum())
        if total == 0:
            continue
        u = rng.random(total)
        ts = np.repeat(starts, counts) + u * np.repeat(durs, counts)
        all_times.append(ts)
        all_ids.append(np.full(total, i, dtype=np.int64))
    if all_times:
        t, ids = _canonical_order(np.concatenate(all_times), np.concatenate(all_ids))
    else:
        t, ids = np.empty(0), np.empty(0, dtype=np.int64)
    return RequestTrace(t, ids, catalog.n, horizon, kind="mmpp",
                        state_times=path_t, state_ids=path_x)


def gen_snm(catalog: Catalog, horizon: float, seed: int) -> RequestTrace:
    """Shot-noise traffic: births plus exponentially decaying request shots."""
    model = catalog.traffic
    if not isinstance(model, Snm):
        raise TypeError("catalog.traffic must be an Snm model")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n = model.n
    births = np.empty(n)
    volumes = np.zeros(n, dtype=np.int64)
    all_times, all_ids = [], []
    gid = 0
    for c in range(model.num_classes):
        nc = int(model.class_sizes[c])
        gaps = _rng(seed, _CLASS, c).exponential(1.0 / model.birth_rates[c], nc)
        tau = np.cumsum(gaps)
        alpha = float(model.decay[c])
        ev = float(model.mean_requests[c])
        for j in range(nc):
            gid += 1
            rng = _rng(seed, _OBJECT, gid)
            v = int(rng.poisson(ev))
            births[gid - 1] = tau[j]
            volumes[gid - 1] = v
            if tau[j] >= horizon or v == 0:
                continue
            mass = -np.expm1(-(horizon - tau[j]) / alpha)
            m = int(rng.poisson(v * mass))
            if m == 0:
                continue
            u = rng.random(m)
            ts = tau[j] - alpha * np.log1p(-u * mass)
            all_times.append(ts)
            all_ids.append(np.full(m, gid, dtype=np.int64))
    if all_times:
        t, ids = _canonical_order(np.concatenate(all_times), np.concatenate(all_ids))
        keep = t < horizon
        t, ids = t[keep], ids[keep]
    else:
        t, ids = np.empty(0), np.empty(0, dtype=np.int64)
    return RequestTrace(t, ids, n, horizon, kind="snm",
                        birth_times=births, shot_counts=volumes)


_GENERATORS = {Renewal: gen_renewal, OnOff: gen_onoff, Mmpp: gen_mmpp, Snm: gen_snm}


def generate_trace(catalog: Catalog, horizon: float, seed: int) -> RequestTrace:
    """Dispatch to the generator matching the catalog's traffic model."""
    if catalog.traffic is None:
        raise ValueError("catalog has no traffic model")
    return _GENERATORS[type(catalog.traffic)](catalog, horizon, seed)


def aggregate_rate(catalog: Catalog) -> float:
    """Long-run total request rate of the catalog's model (not defined for Snm)."""
    model = catalog.traffic
    if model is None or isinstance(model, Snm):
        raise ValueError("aggregate rate needs a stationary traffic model")
    return float(np.sum(model.mean_rates()))


def generate_request_count(catalog: Catalog, count: int, seed: int) -> RequestTrace:
    """Generate at least ``count`` requests and trim to exactly that many."""
    if count < 1:
        raise ValueError("count must be >= 1")
    horizon = count / aggregate_rate(catalog)
    for _ in range(30):
        trace = generate_trace(catalog, horizon, seed)
        if trace.k >= count:
            return trace.head(count)
        horizon *= 1.5
    raise RuntimeError("could not reach the requested trace length")


def format_trace_csv(trace: RequestTrace, catalog: Optional[Catalog] = None,
                     header: bool = True) -> str:
    """``timestamp,object_id[,size]`` rows; floats use round-trip repr."""
    with_sizes = catalog is not None and not catalog.equal_sizes()
    lines = []
    if header:
        lines.append("timestamp,object_id,size" if with_sizes else "timestamp,object_id")
    if with_sizes:
        sz = catalog.sizes
        for t, i in zip(trace.times, trace.ids):
            lines.append(f"{float(t)!r},{i},{float(sz[i - 1])!r}")
    else:
        for t, i in zip(trace.times, trace.ids):
            lines.append(f"{float(t)!r},{i}")
    return "\n".join(lines) + "\n"


def write_trace_csv(trace: RequestTrace, path, catalog: Optional[Catalog] = None,
                    header: bool = True) -> None:
    with open(path, "w") as fh:
        fh.write(format_trace_csv(trace, catalog, header))


@dataclass(eq=False)
class LoadedTrace:
    trace: RequestTrace
    catalog: Catalog
    id_map: dict = field(default_factory=dict)  # original id string -> dense id


def load_trace_csv(path) -> LoadedTrace:
    """Parse a trace CSV, densify ids to 1..n, and canonicalize timestamps.

    ``path`` may also be an open text stream.  Raw ids are remapped
    numerically when every id parses as an integer (the identity for
    already-dense input), lexicographically otherwise.  Non-monotone
    timestamps are sorted with a warning; exact ties get the same
    deterministic separation applied to generated traces.
    """
    times, raw_ids, raw_sizes = [], [], []
    if hasattr(path, "read"):
        _parse_trace_lines(path, times, raw_ids, raw_sizes)
    else:
        with open(path) as fh:
            _parse_trace_lines(fh, times, raw_ids, raw_sizes)
    return _build_loaded_trace(times, raw_ids, raw_sizes)


def _parse_trace_lines(fh, times, raw_ids, raw_sizes):
    for line_no, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) not in (2, 3):
            raise TraceFormatError(line_no, f"expected 2 or 3 fields, got {len(parts)}")
        try:
            t = float(parts[0])
        except ValueError:
            if line_no == 1:
                continue  # header
            raise TraceFormatError(line_no, f"bad timestamp {parts[0]!r}") from None
        if not np.isfinite(t) or t < 0:
            raise TraceFormatError(line_no, f"timestamp must be finite and >= 0, got {parts[0]!r}")
        oid = parts[1].strip()
        if not oid:
            raise TraceFormatError(line_no, "empty object id")
        size = None
        if len(parts) == 3:
            try:
                size = float(parts[2])
            except ValueError:
                raise TraceFormatError(line_no, f"bad size {parts[2]!r}") from None
            if not np.isfinite(size) or size <= 0:
                raise TraceFormatError(line_no, f"size must be positive, got {parts[2]!r}")
        times.append(t)
        raw_ids.append(oid)
        raw_sizes.append(size)


def _build_loaded_trace(times, raw_ids, raw_sizes) -> LoadedTrace:
    if not times:
        raise TraceFormatError(0, "no request rows found")

    uniq = sorted(set(raw_ids))
    if all(_is_int(s) for s in uniq):
        uniq.sort(key=int)
    id_map = {s: k + 1 for k, s in enumerate(uniq)}
    n = len(uniq)

    t_arr = np.asarray(times)
    id_arr = np.asarray([id_map[s] for s in raw_ids], dtype=np.int64)
    sizes = np.ones(n)
    seen = set()
    for oid, size in zip(raw_ids, raw_sizes):
        if size is not None and oid not in seen:
            sizes[id_map[oid] - 1] = size
            seen.add(oid)

    if t_arr.size > 1 and np.any(np.diff(t_arr) < 0):
        warnings.warn("trace timestamps are not sorted; sorting", stacklevel=2)
    t_arr, id_arr = _canonical_order(t_arr, id_arr)
    trace = RequestTrace(t_arr, id_arr, n, float(t_arr[-1]), kind="trace")
    return LoadedTrace(trace, Catalog(sizes), id_map)


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def sample_sizes_bounded_pareto(n: int, shape: float, lower: float, upper: float,
                                rng) -> np.ndarray:
    """Bounded Pareto sizes by inverse CDF; ``rng`` may be a Generator or a seed."""
    if not (0 < lower < upper):
        raise ValueError("need 0 < lower < upper")
    if shape <= 0:
        raise ValueError("shape must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = _rng(int(rng), _SIZES)
    u = rng.random(n)
    ratio = (lower / upper) ** shape
    return lower * (1.0 - u * (1.0 - ratio)) ** (-1.0 / shape)

"""Configuration-driven experiment runs.

Parses a flat ``key = value`` config, builds catalogs and traces per
replication, scores the selected bounds and policies on the identical
trace (paired design), and turns result rows into CSV files and summary
tables.  Everything downstream of the master seed is deterministic.
"""

import configparser
import csv
import io
import time
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import analytic
from .bounds import _warm_index, belady_score, hr_scores
from .hazard import fit_gpd_mle, from_rate, zipf_rates
from .policies import POLICY_KINDS, PolicySpec, simulate_policy
from .traffic import (
    Catalog,
    Mmpp,
    OnOff,
    Renewal,
    RequestTrace,
    Snm,
    generate_request_count,
    generate_trace,
    load_trace_csv,
    sample_sizes_bounded_pareto,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultRow",
    "SummaryRow",
    "TraceFit",
    "FitRow",
    "RESULT_COLUMNS",
    "METHODS",
    "load_config",
    "parse_config",
    "replication_seed",
    "build_catalog",
    "make_trace",
    "run_experiment",
    "summarize",
    "format_summary",
    "fit_real_trace",
    "format_fit_report",
    "format_results_csv",
    "write_results_csv",
    "load_results_csv",
    "format_summary_csv",
    "write_summary_csv",
]

RESULT_COLUMNS = ("experiment", "model", "n", "B", "method", "rep", "hit_prob",
                  "byte_hit_prob", "expected_hits", "K", "seed", "wall_ms")

BOUND_METHODS = ("hr-e", "hr-vb", "hr-vc", "belady", "analytic")
METHODS = BOUND_METHODS + POLICY_KINDS

# Methods whose scorers only accept whole-object cache sizes on an
# equal-size catalog.
_EQUAL_SIZE_METHODS = frozenset({"hr-e", "belady", "lfu", "analytic"})

_TRAFFIC_MODELS = ("renewal", "onoff", "mmpp", "snm", "trace")
_RENEWAL_FAMILIES = ("exponential", "gpd", "uniform", "hyperexponential",
                     "gamma", "erlang")

_SCHEMA = {
    "experiment": {"name", "seed", "replications", "warmup_frac", "methods",
                   "cache_sizes"},
    "traffic": {"model", "n", "requests", "horizon", "family", "shape", "scv",
                "zipf_exponent", "total_rate", "on_time", "off_time",
                "switch_12", "switch_21", "classes", "path", "min_requests"},
    "sizes": {"kind", "shape", "min", "max"},
    "output": {"directory", "timing"},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    replications: int
    warmup_frac: float
    methods: tuple
    cache_sizes: tuple
    model: str
    n: int
    requests: Optional[int]
    horizon: Optional[float]
    family: str
    family_params: dict
    zipf_exponent: float
    total_rate: float
    on_time: float
    off_time: float
    switch_12: float
    switch_21: float
    snm_classes: tuple
    trace_path: Optional[str]
    min_requests: int
    size_kind: str
    size_shape: float
    size_min: float
    size_max: float
    out_dir: str
    timing: bool


@dataclass(frozen=True)
class ResultRow:
    """One (replication, method, cache size) cell of an experiment."""

    experiment: str
    model: str
    n: int
    b: float
    method: str
    rep: int
    hit_prob: float
    byte_hit_prob: Optional[float]
    expected_hits: float
    k: int
    seed: int
    wall_ms: Optional[float]


def _fail(field: str, message: str):
    raise ConfigError(f"[{field}] {message}")


def _get(parser, section, key, default=None):
    if parser.has_option(section, key):
        return parser.get(section, key)
    return default


def _typed(field: str, raw, kind):
    try:
        if kind is int:
            value = int(raw)
        elif kind is float:
            value = float(raw)
        else:
            value = raw
    except (TypeError, ValueError):
        _fail(field, f"expected {kind.__name__}, got {raw!r}")
    return value


def _number_list(field: str, raw: str):
    out = []
    for part in raw.split(","):
        part = part.strip()
        if part:
            out.append(_typed(field, part, float))
    if not out:
        _fail(field, "needs at least one value")
    return tuple(out)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate config text; raise ConfigError naming bad fields."""
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            _fail(section, f"unknown section (expected one of {sorted(_SCHEMA)})")
        unknown = set(parser.options(section)) - _SCHEMA[section]
        if unknown:
            _fail(f"{section}.{sorted(unknown)[0]}", "unknown key")

    name = _get(parser, "experiment", "name", "experiment")
    seed = _typed("experiment.seed", _get(parser, "experiment", "seed", "0"), int)
    reps = _typed("experiment.replications",
                  _get(parser, "experiment", "replications", "1"), int)
    warm = _typed("experiment.warmup_frac",
                  _get(parser, "experiment", "warmup_frac", "0.1"), float)
    raw_methods = _get(parser, "experiment", "methods")
    if raw_methods is None:
        _fail("experiment.methods", "is required")
    methods = tuple(m.strip().lower() for m in raw_methods.split(",") if m.strip())
    raw_sizes = _get(parser, "experiment", "cache_sizes")
    if raw_sizes is None:
        _fail("experiment.cache_sizes", "is required")
    cache_sizes = _number_list("experiment.cache_sizes", raw_sizes)

    model = _get(parser, "traffic", "model")
    if model is None:
        _fail("traffic.model", "is required")
    model = model.lower()
    if model not in _TRAFFIC_MODELS:
        _fail("traffic.model", f"unknown model {model!r} (expected one of {_TRAFFIC_MODELS})")

    raw_classes = _get(parser, "traffic", "classes")
    snm_classes = ()
    if raw_classes is not None:
        for part in raw_classes.split(","):
            bits = part.strip().split(":")
            if len(bits) != 3:
                _fail("traffic.classes", "entries must look like lifespan:requests:count")
            snm_classes += ((_typed("traffic.classes", bits[0], float),
                             _typed("traffic.classes", bits[1], float),
                             _typed("traffic.classes", bits[2], int)),)

    n_raw = _get(parser, "traffic", "n")
    if model == "snm":
        if not snm_classes:
            _fail("traffic.classes", "is required for snm traffic")
        n = int(sum(c[2] for c in snm_classes))
        if n_raw is not None and _typed("traffic.n", n_raw, int) != n:
            _fail("traffic.n", "does not match the class counts; omit it for snm")
    elif model == "trace":
        n = 0  # determined by the fitted trace
    else:
        if n_raw is None:
            _fail("traffic.n", "is required")
        n = _typed("traffic.n", n_raw, int)
        if n < 1:
            _fail("traffic.n", "must be >= 1")

    requests = _get(parser, "traffic", "requests")
    horizon = _get(parser, "traffic", "horizon")
    requests = None if requests is None else _typed("traffic.requests", requests, int)
    horizon = None if horizon is None else _typed("traffic.horizon", horizon, float)
    if model != "trace":
        if (requests is None) == (horizon is None):
            _fail("traffic.requests", "exactly one of requests/horizon is required")
        if model == "snm" and horizon is None:
            _fail("traffic.horizon", "snm traffic is non-stationary; give a horizon")
    if requests is not None and requests < 1:
        _fail("traffic.requests", "must be >= 1")
    if horizon is not None and horizon <= 0:
        _fail("traffic.horizon", "must be positive")

    family = _get(parser, "traffic", "family", "exponential").lower()
    if family not in _RENEWAL_FAMILIES:
        _fail("traffic.family", f"unknown family {family!r} (expected one of {_RENEWAL_FAMILIES})")
    family_params = {}
    if parser.has_option("traffic", "shape"):
        family_params["shape"] = _typed("traffic.shape", parser.get("traffic", "shape"), float)
    if parser.has_option("traffic", "scv"):
        family_params["scv"] = _typed("traffic.scv", parser.get("traffic", "scv"), float)

    zipf_exponent = _typed("traffic.zipf_exponent",
                           _get(parser, "traffic", "zipf_exponent", "0.8"), float)
    total_rate = _typed("traffic.total_rate",
                        _get(parser, "traffic", "total_rate", "1.0"), float)
    on_time = _typed("traffic.on_time", _get(parser, "traffic", "on_time", "7.0"), float)
    off_time = _typed("traffic.off_time", _get(parser, "traffic", "off_time", "63.0"), float)
    switch_12 = _typed("traffic.switch_12", _get(parser, "traffic", "switch_12", "2e-3"), float)
    switch_21 = _typed("traffic.switch_21", _get(parser, "traffic", "switch_21", "1.6e-3"), float)
    trace_path = _get(parser, "traffic", "path")
    min_requests = _typed("traffic.min_requests",
                          _get(parser, "traffic", "min_requests", "100"), int)

    default_size_kind = "trace" if model == "trace" else "unit"
    size_kind = _get(parser, "sizes", "kind", default_size_kind).lower()
    if size_kind not in ("unit", "pareto", "trace"):
        _fail("sizes.kind", f"unknown kind {size_kind!r}")
    size_shape = _typed("sizes.shape", _get(parser, "sizes", "shape", "1.2"), float)
    size_min = _typed("sizes.min", _get(parser, "sizes", "min", "1.0"), float)
    size_max = _typed("sizes.max", _get(parser, "sizes", "max", "100.0"), float)

    out_dir = _get(parser, "output", "directory", "out")
    timing_raw = _get(parser, "output", "timing", "off").lower()
    if timing_raw not in ("on", "off"):
        _fail("output.timing", "must be on or off")

    config = ExperimentConfig(
        name=name, seed=seed, replications=reps, warmup_frac=warm,
        methods=methods, cache_sizes=cache_sizes, model=model, n=n,
        requests=requests, horizon=horizon, family=family,
        family_params=family_params, zipf_exponent=zipf_exponent,
        total_rate=total_rate, on_time=on_time, off_time=off_time,
        switch_12=switch_12, switch_21=switch_21, snm_classes=snm_classes,
        trace_path=trace_path, min_requests=min_requests, size_kind=size_kind,
        size_shape=size_shape, size_min=size_min, size_max=size_max,
        out_dir=out_dir, timing=timing_raw == "on",
    )
    _validate(config)
    return config


def _validate(c: ExperimentConfig):
    if c.replications < 1:
        _fail("experiment.replications", "must be >= 1")
    if not 0.0 <= c.warmup_frac <= 0.5:
        _fail("experiment.warmup_frac", "must lie in [0, 0.5]")
    if not c.methods:
        _fail("experiment.methods", "needs at least one method")
    for m in c.methods:
        if m not in METHODS:
            _fail("experiment.methods", f"unknown method {m!r} (expected one of {METHODS})")
    if len(set(c.methods)) != len(c.methods):
        _fail("experiment.methods", "contains duplicates")
    if any(b <= 0 for b in c.cache_sizes):
        _fail("experiment.cache_sizes", "must be positive")
    if len(set(c.cache_sizes)) != len(c.cache_sizes):
        _fail("experiment.cache_sizes", "contains duplicates")

    equal_size = c.size_kind == "unit"
    whole = all(float(b).is_integer() for b in c.cache_sizes)
    for m in c.methods:
        if m in _EQUAL_SIZE_METHODS and not equal_size and c.model != "trace":
            _fail("experiment.methods", f"{m} needs unit sizes")
        if m in _EQUAL_SIZE_METHODS and not whole:
            _fail("experiment.cache_sizes", f"{m} needs whole-object cache sizes")
    if c.model not in ("trace",) and c.n and max(c.cache_sizes) > c.n:
        if any(m in _EQUAL_SIZE_METHODS for m in c.methods) and equal_size:
            _fail("experiment.cache_sizes", "exceed the catalog size")

    if "analytic" in c.methods:
        if c.model == "trace":
            _fail("experiment.methods", "analytic is incompatible with real traces")
        if c.model == "snm":
            _fail("experiment.methods", "no closed form for snm traffic")
        if c.model == "renewal" and c.family != "exponential":
            _fail("experiment.methods",
                  "analytic for renewal traffic needs the exponential family")
    if "static" in c.methods and c.model == "snm":
        _fail("experiment.methods", "static needs stationary rates; snm has none")

    if c.model == "trace":
        if not c.trace_path:
            _fail("traffic.path", "is required for trace traffic")
        if c.min_requests < 2:
            _fail("traffic.min_requests", "must be >= 2")
        if c.size_kind != "trace":
            _fail("sizes.kind", "sizes come from the trace; use kind = trace")
    elif c.size_kind == "trace":
        _fail("sizes.kind", "kind = trace needs trace traffic")
    if c.size_kind == "pareto":
        if not 0 < c.size_min < c.size_max:
            _fail("sizes.min", "need 0 < min < max")
        if c.size_shape <= 0:
            _fail("sizes.shape", "must be positive")

    if c.model == "onoff" and (c.on_time <= 0 or c.off_time <= 0):
        _fail("traffic.on_time", "on/off durations must be positive")
    if c.model == "mmpp" and (c.switch_12 <= 0 or c.switch_21 <= 0):
        _fail("traffic.switch_12", "switch rates must be positive")
    if c.total_rate <= 0:
        _fail("traffic.total_rate", "must be positive")
    if c.zipf_exponent < 0:
        _fail("traffic.zipf_exponent", "must be >= 0")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def replication_seed(master_seed: int, rep: int) -> int:
    """Derived seed for one replication; feeds trace, sizes, and policies."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(rep,))
    return int(ss.generate_state(1, np.uint64)[0])


def _build_traffic(c: ExperimentConfig):
    if c.model == "renewal":
        rates = zipf_rates(c.n, c.zipf_exponent, c.total_rate)
        return Renewal(tuple(from_rate(c.family, r, **c.family_params) for r in rates))
    if c.model == "onoff":
        pi = c.on_time / (c.on_time + c.off_time)
        # Mean rates follow the Zipf weights; ON rates are scaled up so
        # that lambda_i * pi sums to total_rate.
        on_rates = zipf_rates(c.n, c.zipf_exponent, c.total_rate) / pi
        return OnOff(off_to_on=np.full(c.n, 1.0 / c.off_time),
                     on_to_off=np.full(c.n, 1.0 / c.on_time),
                     on_rates=on_rates)
    if c.model == "mmpp":
        state1 = zipf_rates(c.n, c.zipf_exponent, c.total_rate)
        return Mmpp.two_state(c.switch_12, c.switch_21, state1, state1[::-1].copy())
    if c.model == "snm":
        arr = np.array(c.snm_classes, dtype=float)
        return Snm(mean_lifespans=arr[:, 0], mean_requests=arr[:, 1],
                   class_sizes=arr[:, 2].astype(np.int64))
    raise ConfigError(f"[traffic.model] no builder for {c.model!r}")


def build_catalog(config: ExperimentConfig, seed: int) -> Catalog:
    """Catalog for one replication; Pareto sizes are redrawn per seed."""
    traffic = _build_traffic(config)
    if config.size_kind == "pareto":
        sizes = sample_sizes_bounded_pareto(traffic.n, config.size_shape,
                                            config.size_min, config.size_max, seed)
    else:
        sizes = np.ones(traffic.n)
    return Catalog(sizes=sizes, traffic=traffic)


def make_trace(config: ExperimentConfig, catalog: Catalog, seed: int) -> RequestTrace:
    if config.requests is not None:
        return generate_request_count(catalog, config.requests, seed)
    return generate_trace(catalog, config.horizon, seed)


def _analytic_scores(config, catalog, trace, b_values):
    model = catalog.traffic
    k_post = trace.k - _warm_index(trace.k, config.warmup_frac)
    out = {}
    for b in b_values:
        if isinstance(model, Renewal):
            res = analytic.poisson_hr(model.mean_rates(), int(b))
        elif isinstance(model, OnOff):
            res = analytic.onoff_hr_recursive(model.on_rates, model.on_prob, int(b))
        elif isinstance(model, Mmpp):
            res = analytic.mmpp_hr(model, int(b))
        else:
            raise ConfigError("[experiment.methods] no closed form for this model")
        out[b] = (res.hit_prob, None, res.hit_prob * k_post, k_post)
    return out


def _score_method(method, config, catalog, trace, seed):
    """Score one method at every swept cache size: b -> row fields."""
    bs = config.cache_sizes
    warm = config.warmup_frac
    if method == "analytic":
        return _analytic_scores(config, catalog, trace, bs)
    if method in ("hr-e", "hr-vb", "hr-vc"):
        kind = {"hr-e": "equal", "hr-vb": "byte", "hr-vc": "object"}[method]
        keys = [int(b) if kind == "equal" else float(b) for b in bs]
        scores = hr_scores(trace, catalog, keys, kind, warm)
        return {b: _from_score(scores[key]) for b, key in zip(bs, keys)}
    if method == "belady":
        return {b: _from_score(belady_score(trace, int(b), warm)) for b in bs}
    rates = catalog.traffic.mean_rates() if method == "static" else None
    spec = PolicySpec(kind=method, rates=rates)
    return {b: _from_score(simulate_policy(trace, catalog, spec, float(b),
                                           seed=seed, warmup_frac=warm))
            for b in bs}


def _from_score(score):
    return (score.hit_prob, score.byte_hit_prob, score.expected_hits, score.k)


def run_experiment(config: ExperimentConfig):
    """Run all replications; every method in a replication shares one trace."""
    rows = []
    fit = None
    if config.model == "trace":
        fit = fit_real_trace(config.trace_path, config.min_requests)
        _check_trace_sweep(config, fit.catalog)
    for rep in range(config.replications):
        seed = replication_seed(config.seed, rep)
        if fit is not None:
            catalog, trace = fit.catalog, fit.trace
        else:
            catalog = build_catalog(config, seed)
            trace = make_trace(config, catalog, seed)
        for method in config.methods:
            start = time.perf_counter()
            scored = _score_method(method, config, catalog, trace, seed)
            wall = (time.perf_counter() - start) * 1e3 if config.timing else None
            for b in config.cache_sizes:
                hit, byte_hit, exp_hits, k = scored[b]
                rows.append(ResultRow(
                    experiment=config.name, model=config.model,
                    n=catalog.n, b=float(b), method=method, rep=rep,
                    hit_prob=hit, byte_hit_prob=byte_hit,
                    expected_hits=exp_hits, k=k, seed=seed,
                    wall_ms=None if wall is None else round(wall, 3)))
    rows.sort(key=lambda r: (r.rep, config.methods.index(r.method), r.b))
    return rows


def _check_trace_sweep(config: ExperimentConfig, catalog: Catalog):
    if any(m in _EQUAL_SIZE_METHODS for m in config.methods):
        if not catalog.equal_sizes():
            raise ConfigError("[experiment.methods] equal-size methods need a "
                              "trace with uniform sizes")
        if max(config.cache_sizes) > catalog.n:
            raise ConfigError("[experiment.cache_sizes] exceed the fitted catalog")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_results_csv(rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in rows:
        writer.writerow([r.experiment, r.model, r.n, _fmt(r.b), r.method,
                         r.rep, _fmt(r.hit_prob), _fmt(r.byte_hit_prob),
                         _fmt(r.expected_hits), r.k, r.seed, _fmt(r.wall_ms)])
    return out.getvalue()


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_results_csv(rows))


def load_results_csv(path):
    """Parse result rows from a path or an open text stream."""
    if hasattr(path, "read"):
        return _parse_results(csv.reader(path))
    with open(path, newline="") as fh:
        return _parse_results(csv.reader(fh))


def _parse_results(reader):
    rows = []
    header = next(reader, None)
    if header != list(RESULT_COLUMNS):
        raise ValueError(f"unexpected results header: {header}")
    for rec in reader:
        if len(rec) != len(RESULT_COLUMNS):
            raise ValueError(f"malformed results row: {rec}")
        rows.append(ResultRow(
            experiment=rec[0], model=rec[1], n=int(rec[2]), b=float(rec[3]),
            method=rec[4], rep=int(rec[5]), hit_prob=float(rec[6]),
            byte_hit_prob=float(rec[7]) if rec[7] else None,
            expected_hits=float(rec[8]), k=int(rec[9]), seed=int(rec[10]),
            wall_ms=float(rec[11]) if rec[11] else None))
    return rows


@dataclass(frozen=True)
class SummaryRow:
    """Replication statistics for one (method, cache size) cell.

    ``verdict`` compares the method's mean hit probability against the
    hr-e rows of the same sweep point: "bounded" when mean <= hr-e mean
    plus two paired standard errors, "exceeds" otherwise, "n/a" without
    an hr-e baseline, and "" on the hr-e rows themselves.
    """

    method: str
    b: float
    reps: int
    mean: float
    std: Optional[float]
    ci_lo: float
    ci_hi: float
    verdict: str


def summarize(rows):
    """Per (method, B) statistics with a dominance verdict against hr-e."""
    if not rows:
        raise ValueError("summarize needs at least one result row")
    cells: dict = {}
    for r in rows:
        cells.setdefault((r.method, r.b), {})[r.rep] = r.hit_prob
    out = []
    for (method, b), by_rep in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        vals = np.array([by_rep[rep] for rep in sorted(by_rep)])
        reps = vals.size
        mean = float(vals.mean())
        if reps > 1:
            std = float(vals.std(ddof=1))
            half = 1.96 * std / np.sqrt(reps)
            ci_lo, ci_hi = mean - half, mean + half
        else:
            std, ci_lo, ci_hi = None, mean, mean
        out.append(SummaryRow(method, b, reps, mean, std, ci_lo, ci_hi,
                              _verdict(method, by_rep, cells.get(("hr-e", b)))))
    return out


def _verdict(method, by_rep, baseline) -> str:
    if method == "hr-e":
        return ""
    if not baseline:
        return "n/a"
    common = sorted(set(by_rep) & set(baseline))
    if not common:
        return "n/a"
    diffs = np.array([baseline[rep] - by_rep[rep] for rep in common])
    margin = 0.0
    if diffs.size > 1:
        margin = 2.0 * float(diffs.std(ddof=1)) / np.sqrt(diffs.size)
    return "bounded" if float(diffs.mean()) >= -margin else "exceeds"


def format_summary(summary) -> str:
    header = f"{'method':<10} {'B':>8} {'reps':>5} {'mean':>10} {'std':>10} " \
             f"{'ci_lo':>10} {'ci_hi':>10}  vs hr-e"
    lines = [header, "-" * len(header)]
    for s in summary:
        std = "n/a" if s.std is None else f"{s.std:.6f}"
        b = int(s.b) if float(s.b).is_integer() else s.b
        lines.append(f"{s.method:<10} {b:>8} {s.reps:>5} {s.mean:>10.6f} "
                     f"{std:>10} {s.ci_lo:>10.6f} {s.ci_hi:>10.6f}  {s.verdict}")
    return "\n".join(lines) + "\n"


def format_summary_csv(summary) -> str:
    """Plot-ready long format: method, B, mean, ci_lo, ci_hi."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["method", "B", "mean", "ci_lo", "ci_hi"])
    for s in summary:
        writer.writerow([s.method, _fmt(s.b), _fmt(s.mean),
                         _fmt(s.ci_lo), _fmt(s.ci_hi)])
    return out.getvalue()


def write_summary_csv(summary, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_summary_csv(summary))


@dataclass(frozen=True)
class FitRow:
    """Diagnostics for one fitted object."""

    object_id: str
    requests: int
    shape: float
    scale: float
    converged: bool


@dataclass(frozen=True)
class TraceFit:
    """A real trace reduced to its fittable objects.

    ``trace`` keeps only requests to objects with enough history, with
    ids re-densified to 1..n; ``catalog`` carries the fitted renewal
    distributions; ``id_map`` maps original id labels to new dense ids.
    """

    catalog: Catalog
    trace: RequestTrace
    rows: tuple
    id_map: dict
    dropped_short: int
    dropped_degenerate: int


def format_fit_report(fit: "TraceFit") -> str:
    """Per-object fit diagnostics as CSV."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["object_id", "requests", "shape", "scale", "converged"])
    for row in fit.rows:
        writer.writerow([row.object_id, row.requests, _fmt(row.shape),
                         _fmt(row.scale), row.converged])
    return out.getvalue()


def _usable_gaps(times: np.ndarray) -> np.ndarray:
    """Inter-request gaps excluding tie-separation artifacts.

    Loading a trace steps duplicated timestamps apart by 1e-12 (or one
    ulp); gaps at or below that scale are dropped so that requests which
    shared a timestamp in the source contribute no gap sample.
    """
    gaps = np.diff(times)
    tol = np.maximum(2e-12, 4.0 * np.spacing(times[:-1]))
    return gaps[gaps > tol]


def fit_real_trace(path, min_requests: int = 100) -> TraceFit:
    """Filter a trace to objects with >= min_requests requests and fit
    a generalized-Pareto inter-request distribution to each.

    Requests at duplicated timestamps contribute no gap sample; objects
    without at least two usable gaps cannot be fitted and are excluded
    with a warning.
    """
    loaded = load_trace_csv(path)
    trace, catalog = loaded.trace, loaded.catalog
    labels = {dense: orig for orig, dense in loaded.id_map.items()}

    kept, dists, rows = [], [], []
    dropped_short = dropped_degenerate = 0
    for i in range(1, trace.n + 1):
        times = trace.times[trace.ids == i]
        label = str(labels.get(i, i))
        if times.size < min_requests:
            dropped_short += 1
            continue
        gaps = _usable_gaps(times)
        if gaps.size < 2:
            dropped_degenerate += 1
            warnings.warn(f"object {label}: no usable inter-request gaps; excluded")
            continue
        fit = fit_gpd_mle(gaps)
        kept.append(i)
        dists.append(fit.distribution())
        rows.append(FitRow(object_id=label, requests=int(times.size),
                           shape=fit.shape, scale=fit.scale,
                           converged=fit.converged))
    if not kept:
        raise ValueError(f"no object has {min_requests} requests; nothing to fit")

    kept_arr = np.array(kept, dtype=np.int64)
    new_id = np.zeros(trace.n + 1, dtype=np.int64)
    new_id[kept_arr] = np.arange(1, kept_arr.size + 1)
    mask = np.isin(trace.ids, kept_arr)
    filtered = RequestTrace(trace.times[mask], new_id[trace.ids[mask]],
                            kept_arr.size, trace.horizon, kind="renewal")
    new_catalog = Catalog(sizes=catalog.sizes[kept_arr - 1],
                          traffic=Renewal(tuple(dists)))
    id_map = {labels.get(i, str(i)): int(new_id[i]) for i in kept}
    return TraceFit(catalog=new_catalog, trace=filtered, rows=tuple(rows),
                    id_map=id_map, dropped_short=dropped_short,
                    dropped_degenerate=dropped_degenerate)

"""Experiment layer: config parsing, runs, CSV round trips, trace fitting."""

import io
import warnings

import numpy as np
import pytest

from cachelab.experiment import (
    METHODS,
    RESULT_COLUMNS,
    ConfigError,
    ResultRow,
    build_catalog,
    fit_real_trace,
    format_fit_report,
    format_results_csv,
    format_summary,
    format_summary_csv,
    load_config,
    load_results_csv,
    make_trace,
    parse_config,
    replication_seed,
    run_experiment,
    summarize,
    write_results_csv,
)
from cachelab.hazard import GeneralizedPareto, zipf_rates
from cachelab.traffic import Catalog, Mmpp, OnOff, Renewal, Snm, generate_request_count

BASE = """
[experiment]
name = demo
seed = 42
replications = 2
methods = hr-e, static
cache_sizes = 2, 4

[traffic]
model = renewal
n = 8
requests = 400
"""


def config(text=BASE, **overrides):
    cfg = parse_config(text)
    if overrides:
        import dataclasses

        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


class TestParseConfig:
    def test_minimal(self):
        c = parse_config(BASE)
        assert c.name == "demo"
        assert c.seed == 42
        assert c.replications == 2
        assert c.methods == ("hr-e", "static")
        assert c.cache_sizes == (2.0, 4.0)
        assert c.model == "renewal"
        assert c.family == "exponential"
        assert c.n == 8
        assert c.requests == 400 and c.horizon is None

    def test_defaults(self):
        c = parse_config(BASE)
        assert c.warmup_frac == 0.1
        assert c.zipf_exponent == 0.8
        assert c.total_rate == 1.0
        assert c.size_kind == "unit"
        assert c.out_dir == "out"
        assert c.timing is False

    def test_inline_comments(self):
        c = parse_config(BASE.replace("seed = 42", "seed = 42  # master"))
        assert c.seed == 42

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"\[plotting\] unknown section"):
            parse_config(BASE + "\n[plotting]\nstyle = dark\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"\[traffic\.bogus\] unknown key"):
            parse_config(BASE + "bogus = 1\n")
        with pytest.raises(ConfigError, match=r"\[experiment\.rng\] unknown key"):
            parse_config(BASE.replace("seed = 42", "seed = 42\nrng = pcg"))

    def test_unparseable(self):
        with pytest.raises(ConfigError, match="unparseable"):
            parse_config("methods = hr-e\n")  # key before any section header

    def test_missing_methods(self):
        with pytest.raises(ConfigError, match=r"\[experiment\.methods\] is required"):
            parse_config(BASE.replace("methods = hr-e, static\n", ""))

    def test_missing_cache_sizes(self):
        with pytest.raises(ConfigError, match=r"experiment\.cache_sizes"):
            parse_config(BASE.replace("cache_sizes = 2, 4\n", ""))

    def test_missing_model(self):
        with pytest.raises(ConfigError, match=r"\[traffic\.model\] is required"):
            parse_config(BASE.replace("model = renewal\n", ""))

    def test_bad_int(self):
        with pytest.raises(ConfigError, match=r"\[experiment\.seed\] expected int"):
            parse_config(BASE.replace("seed = 42", "seed = forty-two"))

    def test_unknown_model(self):
        with pytest.raises(ConfigError, match="unknown model"):
            parse_config(BASE.replace("model = renewal", "model = markov"))

    def test_unknown_family(self):
        with pytest.raises(ConfigError, match="unknown family"):
            parse_config(BASE + "family = weibull\n")

    def test_family_params(self):
        c = parse_config(BASE + "family = gamma\nshape = 0.5\n")
        assert c.family == "gamma"
        assert c.family_params == {"shape": 0.5}

    def test_requests_and_horizon_exclusive(self):
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(BASE + "horizon = 100\n")
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(BASE.replace("requests = 400\n", ""))

    def test_n_required(self):
        with pytest.raises(ConfigError, match=r"\[traffic\.n\] is required"):
            parse_config(BASE.replace("n = 8\n", ""))

    def test_snm_counts_define_n(self):
        text = BASE.replace("model = renewal", "model = snm")
        text = text.replace("n = 8\n", "")
        text = text.replace("requests = 400", "horizon = 50")
        text = text.replace("methods = hr-e, static", "methods = lru")
        c = parse_config(text + "classes = 10:40:3, 5:12:2\n")
        assert c.n == 5
        assert c.snm_classes == ((10.0, 40.0, 3), (5.0, 12.0, 2))

    def test_snm_requires_horizon(self):
        text = BASE.replace("model = renewal", "model = snm")
        text = text.replace("n = 8\n", "")
        text = text.replace("methods = hr-e, static", "methods = lru")
        with pytest.raises(ConfigError, match="horizon"):
            parse_config(text + "classes = 10:40:5\n")

    def test_snm_bad_class_entry(self):
        text = BASE.replace("model = renewal", "model = snm")
        with pytest.raises(ConfigError, match="lifespan:requests:count"):
            parse_config(text + "classes = 10:40\n")


class TestValidation:
    def test_unknown_method(self):
        with pytest.raises(ConfigError, match="unknown method"):
            parse_config(BASE.replace("static", "mru"))

    def test_duplicate_methods(self):
        with pytest.raises(ConfigError, match="duplicates"):
            parse_config(BASE.replace("static", "hr-e"))

    def test_warmup_range(self):
        with pytest.raises(ConfigError, match="warmup_frac"):
            parse_config(BASE.replace("seed = 42", "seed = 42\nwarmup_frac = 0.6"))

    def test_nonpositive_cache_size(self):
        with pytest.raises(ConfigError, match="positive"):
            parse_config(BASE.replace("cache_sizes = 2, 4", "cache_sizes = 0, 4"))

    def test_duplicate_cache_sizes(self):
        with pytest.raises(ConfigError, match="duplicates"):
            parse_config(BASE.replace("cache_sizes = 2, 4", "cache_sizes = 4, 4"))

    def test_equal_size_method_rejects_pareto_sizes(self):
        with pytest.raises(ConfigError, match="unit sizes"):
            parse_config(BASE + "\n[sizes]\nkind = pareto\n")

    def test_equal_size_method_rejects_fractional_b(self):
        with pytest.raises(ConfigError, match="whole-object"):
            parse_config(BASE.replace("cache_sizes = 2, 4", "cache_sizes = 2.5"))

    def test_cache_size_exceeds_catalog(self):
        with pytest.raises(ConfigError, match="exceed"):
            parse_config(BASE.replace("cache_sizes = 2, 4", "cache_sizes = 9"))

    def test_fractional_b_fine_for_size_aware_methods(self):
        text = BASE.replace("methods = hr-e, static", "methods = hr-vc, lru")
        text = text + "\n[sizes]\nkind = pareto\n"
        c = parse_config(text.replace("cache_sizes = 2, 4", "cache_sizes = 2.5"))
        assert c.cache_sizes == (2.5,)

    def test_analytic_needs_exponential_family(self):
        text = BASE.replace("methods = hr-e, static", "methods = analytic")
        with pytest.raises(ConfigError, match="exponential"):
            parse_config(text + "family = gamma\nshape = 0.5\n")

    def test_analytic_rejects_snm(self):
        text = BASE.replace("model = renewal", "model = snm")
        text = text.replace("n = 8\n", "")
        text = text.replace("requests = 400", "horizon = 50")
        text = text.replace("methods = hr-e, static", "methods = analytic")
        with pytest.raises(ConfigError, match="no closed form"):
            parse_config(text + "classes = 10:40:5\n")

    def test_static_rejects_snm(self):
        text = BASE.replace("model = renewal", "model = snm")
        text = text.replace("n = 8\n", "")
        text = text.replace("requests = 400", "horizon = 50")
        text = text.replace("methods = hr-e, static", "methods = static")
        with pytest.raises(ConfigError, match="stationary"):
            parse_config(text + "classes = 10:40:5\n")

    def test_trace_model_needs_path(self):
        text = BASE.replace("model = renewal", "model = trace")
        with pytest.raises(ConfigError, match=r"\[traffic\.path\]"):
            parse_config(text)

    def test_trace_sizes_only_with_trace_model(self):
        text = BASE.replace("methods = hr-e, static", "methods = lru")
        with pytest.raises(ConfigError, match="trace traffic"):
            parse_config(text + "\n[sizes]\nkind = trace\n")

    def test_pareto_bounds(self):
        text = BASE.replace("methods = hr-e, static", "methods = lru")
        with pytest.raises(ConfigError, match="0 < min < max"):
            parse_config(text + "\n[sizes]\nkind = pareto\nmin = 5\nmax = 2\n")

    def test_onoff_durations_positive(self):
        text = BASE.replace("model = renewal", "model = onoff")
        with pytest.raises(ConfigError, match="on/off durations"):
            parse_config(text + "on_time = 0\n")

    def test_mmpp_switch_rates_positive(self):
        text = BASE.replace("model = renewal", "model = mmpp")
        with pytest.raises(ConfigError, match="switch rates"):
            parse_config(text + "switch_12 = -1\n")

    def test_total_rate_positive(self):
        with pytest.raises(ConfigError, match="total_rate"):
            parse_config(BASE + "total_rate = 0\n")

    def test_timing_flag(self):
        assert parse_config(BASE + "\n[output]\ntiming = on\n").timing is True
        with pytest.raises(ConfigError, match="timing"):
            parse_config(BASE + "\n[output]\ntiming = maybe\n")

    def test_load_config(self, tmp_path):
        p = tmp_path / "exp.ini"
        p.write_text(BASE)
        assert load_config(p) == parse_config(BASE)


class TestSeeds:
    def test_deterministic(self):
        assert replication_seed(42, 3) == replication_seed(42, 3)

    def test_distinct_across_reps_and_masters(self):
        seeds = {replication_seed(m, r) for m in (0, 1, 42) for r in range(20)}
        assert len(seeds) == 60


class TestBuildCatalog:
    def test_renewal(self):
        cat = build_catalog(config(), seed=7)
        assert isinstance(cat.traffic, Renewal)
        assert cat.n == 8
        assert cat.equal_sizes()
        np.testing.assert_allclose(cat.traffic.mean_rates(), zipf_rates(8, 0.8, 1.0))

    def test_onoff_rates_scaled_by_on_prob(self):
        text = BASE.replace("model = renewal", "model = onoff")
        cat = build_catalog(parse_config(text + "on_time = 5\noff_time = 15\n"), seed=0)
        model = cat.traffic
        assert isinstance(model, OnOff)
        np.testing.assert_allclose(model.on_prob, 0.25)
        np.testing.assert_allclose(model.mean_rates(), zipf_rates(8, 0.8, 1.0))

    def test_mmpp_second_state_reverses_popularity(self):
        text = BASE.replace("model = renewal", "model = mmpp")
        cat = build_catalog(parse_config(text), seed=0)
        model = cat.traffic
        assert isinstance(model, Mmpp)
        np.testing.assert_array_equal(model.state_rates[1], model.state_rates[0][::-1])

    def test_snm_classes(self):
        text = BASE.replace("model = renewal", "model = snm")
        text = text.replace("n = 8\n", "")
        text = text.replace("requests = 400", "horizon = 50")
        text = text.replace("methods = hr-e, static", "methods = lru")
        cat = build_catalog(parse_config(text + "classes = 10:40:3, 5:12:2\n"), seed=0)
        assert isinstance(cat.traffic, Snm)
        assert cat.n == 5

    def test_pareto_sizes_vary_with_seed(self):
        text = BASE.replace("methods = hr-e, static", "methods = lru")
        c = parse_config(text + "\n[sizes]\nkind = pareto\nmin = 1\nmax = 50\n")
        a, b = build_catalog(c, seed=1), build_catalog(c, seed=2)
        assert not np.array_equal(a.sizes, b.sizes)
        assert np.array_equal(build_catalog(c, seed=1).sizes, a.sizes)

    def test_make_trace_by_count_and_horizon(self):
        c = config()
        cat = build_catalog(c, seed=3)
        assert make_trace(c, cat, seed=3).k == 400
        c2 = config(requests=None, horizon=200.0)
        tr = make_trace(c2, cat, seed=3)
        assert tr.horizon == 200.0 and tr.k > 0


class TestRunExperiment:
    def test_row_grid(self):
        rows = run_experiment(config())
        assert len(rows) == 2 * 2 * 2  # reps x methods x cache sizes
        assert [(r.rep, r.method, r.b) for r in rows] == [
            (0, "hr-e", 2.0), (0, "hr-e", 4.0), (0, "static", 2.0),
            (0, "static", 4.0), (1, "hr-e", 2.0), (1, "hr-e", 4.0),
            (1, "static", 2.0), (1, "static", 4.0)]

    def test_paired_design_shares_seed_and_trace_stats(self):
        rows = run_experiment(config())
        by_rep = {}
        for r in rows:
            by_rep.setdefault(r.rep, set()).add(r.seed)
        for rep, seeds in by_rep.items():
            assert len(seeds) == 1
            assert seeds == {replication_seed(42, rep)}

    def test_exponential_hr_e_matches_static(self):
        # Constant hazards make the bound simulate the best static set.
        rows = run_experiment(config())
        cell = {(r.method, r.rep, r.b): r.hit_prob for r in rows}
        for rep in (0, 1):
            for b in (2.0, 4.0):
                diff = abs(cell[("hr-e", rep, b)] - cell[("static", rep, b)])
                assert diff < 1e-12

    def test_deterministic_results(self):
        a = format_results_csv(run_experiment(config()))
        b = format_results_csv(run_experiment(config()))
        assert a == b

    def test_timing_column(self):
        rows = run_experiment(config())
        assert all(r.wall_ms is None for r in rows)
        rows = run_experiment(config(timing=True))
        assert all(r.wall_ms is not None and r.wall_ms >= 0 for r in rows)

    def test_analytic_rows(self):
        text = BASE.replace("methods = hr-e, static", "methods = hr-e, analytic")
        rows = run_experiment(parse_config(text))
        ana = [r for r in rows if r.method == "analytic"]
        assert len(ana) == 4
        for r in ana:
            assert r.byte_hit_prob is None
            assert r.expected_hits == pytest.approx(r.hit_prob * r.k)
        # Same closed form regardless of replication.
        assert ana[0].hit_prob == ana[2].hit_prob

    def test_k_counts_post_warmup_requests(self):
        rows = run_experiment(config())
        assert all(r.k == 400 - 40 for r in rows)

    def test_expected_hits_consistent(self):
        for r in run_experiment(config()):
            assert r.expected_hits == pytest.approx(r.hit_prob * r.k, abs=1e-9)

    def test_bound_dominates_policies_here(self):
        rows = run_experiment(config())
        cell = {(r.method, r.rep, r.b): r.hit_prob for r in rows}
        for rep in (0, 1):
            for b in (2.0, 4.0):
                assert cell[("hr-e", rep, b)] >= cell[("static", rep, b)] - 1e-12


class TestResultsCsv:
    def test_header(self):
        text = format_results_csv([])
        assert text == ",".join(RESULT_COLUMNS) + "\n"

    def test_round_trip(self, tmp_path):
        rows = run_experiment(config())
        p = tmp_path / "results.csv"
        write_results_csv(rows, p)
        assert load_results_csv(p) == rows

    def test_round_trip_from_stream(self):
        rows = run_experiment(config(timing=True))
        loaded = load_results_csv(io.StringIO(format_results_csv(rows)))
        assert loaded == rows

    def test_rejects_foreign_header(self):
        with pytest.raises(ValueError, match="unexpected results header"):
            load_results_csv(io.StringIO("a,b,c\n1,2,3\n"))

    def test_rejects_short_row(self):
        text = ",".join(RESULT_COLUMNS) + "\ndemo,renewal,8\n"
        with pytest.raises(ValueError, match="malformed"):
            load_results_csv(io.StringIO(text))


def row(method, rep, hit, b=2.0):
    return ResultRow(experiment="x", model="renewal", n=8, b=b, method=method,
                     rep=rep, hit_prob=hit, byte_hit_prob=None,
                     expected_hits=hit * 100, k=100, seed=1, wall_ms=None)


class TestSummarize:
    def test_statistics(self):
        vals = [0.50, 0.54, 0.58]
        rows = [row("lru", i, v) for i, v in enumerate(vals)]
        (s,) = summarize(rows)
        assert s.method == "lru" and s.b == 2.0 and s.reps == 3
        assert s.mean == pytest.approx(np.mean(vals))
        assert s.std == pytest.approx(np.std(vals, ddof=1))
        half = 1.96 * s.std / np.sqrt(3)
        assert s.ci_lo == pytest.approx(s.mean - half)
        assert s.ci_hi == pytest.approx(s.mean + half)
        assert s.verdict == "n/a"

    def test_single_rep_degenerate_ci(self):
        (s,) = summarize([row("lru", 0, 0.5)])
        assert s.std is None
        assert s.ci_lo == s.ci_hi == 0.5

    def test_verdict_bounded_and_exceeds(self):
        rows = []
        for rep, base in enumerate([0.60, 0.62, 0.61, 0.63]):
            rows.append(row("hr-e", rep, base))
            rows.append(row("lru", rep, base - 0.05))
            rows.append(row("lfu", rep, base + 0.05))
        summary = {s.method: s for s in summarize(rows)}
        assert summary["hr-e"].verdict == ""
        assert summary["lru"].verdict == "bounded"
        assert summary["lfu"].verdict == "exceeds"

    def test_verdict_within_noise_is_bounded(self):
        rng = np.random.default_rng(5)
        rows = []
        for rep in range(10):
            base = 0.6 + rng.normal(0, 0.01)
            rows.append(row("hr-e", rep, base))
            rows.append(row("lru", rep, base + rng.normal(0, 1e-4)))
        summary = {s.method: s for s in summarize(rows)}
        assert summary["lru"].verdict == "bounded"

    def test_sorted_by_cache_size_then_method(self):
        rows = [row("lru", 0, 0.5, b=4.0), row("hr-e", 0, 0.6, b=4.0),
                row("lru", 0, 0.4, b=2.0)]
        order = [(s.b, s.method) for s in summarize(rows)]
        assert order == [(2.0, "lru"), (4.0, "hr-e"), (4.0, "lru")]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            summarize([])

    def test_format_summary_table(self):
        text = format_summary(summarize(run_experiment(config())))
        lines = text.splitlines()
        assert lines[0].split()[:4] == ["method", "B", "reps", "mean"]
        assert "vs hr-e" in lines[0]
        assert len(lines) == 2 + 4  # header, rule, 2 methods x 2 sizes
        assert any("bounded" in ln for ln in lines[2:])

    def test_format_summary_csv(self):
        text = format_summary_csv(summarize([row("lru", 0, 0.5)]))
        assert text.splitlines()[0] == "method,B,mean,ci_lo,ci_hi"
        assert text.splitlines()[1].startswith("lru,2.0,0.5")

    def test_summary_survives_csv_round_trip(self):
        rows = run_experiment(config())
        loaded = load_results_csv(io.StringIO(format_results_csv(rows)))
        assert summarize(loaded) == summarize(rows)


def synthetic_trace_csv(shapes, scales, requests, seed=11, header=True):
    """Renewal trace with GPD inter-request gaps, one object per shape."""
    dists = tuple(GeneralizedPareto(xi, s) for xi, s in zip(shapes, scales))
    cat = Catalog(np.ones(len(shapes)), Renewal(dists))
    trace = generate_request_count(cat, requests, seed=seed)
    lines = ["timestamp,object_id"] if header else []
    lines += [f"{float(t)!r},{int(i)}" for t, i in zip(trace.times, trace.ids)]
    return "\n".join(lines) + "\n"


class TestFitRealTrace:
    def test_recovers_gpd_shape(self):
        text = synthetic_trace_csv([0.48, 0.48], [1.0, 2.0], 30_000)
        fit = fit_real_trace(io.StringIO(text))
        assert fit.dropped_short == 0 and fit.dropped_degenerate == 0
        for r in fit.rows:
            assert r.converged
            assert abs(r.shape - 0.48) < 0.05

    def test_threshold_boundary(self):
        # Object 2 gets exactly 99 requests: one short of the default cut.
        rng = np.random.default_rng(3)
        t = 0.0
        pairs = []
        for k in range(100):
            t += rng.exponential(1.0)
            pairs.append((float(t), 1))
            if k < 99:
                pairs.append((float(t) + 0.25, 2))
        pairs.sort()
        lines = ["timestamp,object_id"] + [f"{t!r},{i}" for t, i in pairs]
        fit = fit_real_trace(io.StringIO("\n".join(lines) + "\n"))
        assert fit.dropped_short == 1
        assert [r.object_id for r in fit.rows] == ["1"]
        assert fit.catalog.n == 1
        assert np.array_equal(np.unique(fit.trace.ids), [1])

    def test_min_requests_override(self):
        text = synthetic_trace_csv([0.3], [1.0], 50)
        fit = fit_real_trace(io.StringIO(text), min_requests=10)
        assert fit.rows[0].requests == 50

    def test_duplicate_timestamps_excluded(self):
        rng = np.random.default_rng(0)
        t = 0.0
        pairs = [(5.0, 9)] * 150
        for _ in range(150):
            t += rng.exponential(1.0)
            pairs.append((float(t), 1))
        pairs.sort()
        lines = ["timestamp,object_id"] + [f"{t!r},{i}" for t, i in pairs]
        with pytest.warns(UserWarning, match="object 9"):
            fit = fit_real_trace(io.StringIO("\n".join(lines) + "\n"))
        assert fit.dropped_degenerate == 1
        assert [r.object_id for r in fit.rows] == ["1"]

    def test_nothing_fittable(self):
        text = synthetic_trace_csv([0.3], [1.0], 50)
        with pytest.raises(ValueError, match="no object has 100 requests"):
            fit_real_trace(io.StringIO(text))

    def test_ids_redensified(self):
        # Sparse labels 5 and 17 come back as dense ids 1 and 2.
        text = synthetic_trace_csv([0.2, 0.2], [1.0, 1.0], 400)
        text = text.replace(",1", ",5").replace(",2", ",17")
        fit = fit_real_trace(io.StringIO(text), min_requests=50)
        assert fit.id_map == {"5": 1, "17": 2}
        assert sorted(np.unique(fit.trace.ids)) == [1, 2]
        assert fit.trace.kind == "renewal"

    def test_fit_report_csv(self):
        text = synthetic_trace_csv([0.3], [1.0], 200)
        report = format_fit_report(fit_real_trace(io.StringIO(text), min_requests=50))
        lines = report.splitlines()
        assert lines[0] == "object_id,requests,shape,scale,converged"
        assert lines[1].startswith("1,200,")

    def test_runs_through_experiment(self, tmp_path):
        p = tmp_path / "trace.csv"
        p.write_text(synthetic_trace_csv([0.4, 0.4, 0.4], [1.0, 1.5, 2.0], 2000))
        cfg = parse_config(f"""
[experiment]
methods = hr-e, lru
cache_sizes = 1, 2

[traffic]
model = trace
path = {p}
min_requests = 100
""")
        rows = run_experiment(cfg)
        assert {r.method for r in rows} == {"hr-e", "lru"}
        assert all(r.model == "trace" for r in rows)
        cell = {(r.method, r.b): r.hit_prob for r in rows}
        for b in (1.0, 2.0):
            assert cell[("hr-e", b)] >= cell[("lru", b)] - 1e-12

    def test_trace_sweep_checked_against_fitted_catalog(self, tmp_path):
        p = tmp_path / "trace.csv"
        p.write_text(synthetic_trace_csv([0.4, 0.4], [1.0, 1.5], 1000))
        cfg = parse_config(f"""
[experiment]
methods = hr-e
cache_sizes = 5

[traffic]
model = trace
path = {p}
""")
        with pytest.raises(ConfigError, match="exceed the fitted catalog"):
            run_experiment(cfg)


class TestMethodsRegistry:
    def test_all_methods_runnable_on_equal_sizes(self):
        text = BASE.replace("methods = hr-e, static",
                            "methods = " + ", ".join(METHODS))
        text = text.replace("replications = 2", "replications = 1")
        text = text.replace("requests = 400", "requests = 300")
        rows = run_experiment(parse_config(text))
        assert {r.method for r in rows} == set(METHODS)
        for r in rows:
            assert 0.0 <= r.hit_prob <= 1.0

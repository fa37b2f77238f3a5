"""Closed-form hazards, CDFs, means, sampling, and the GPD fitter."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from cachelab.hazard import (
    HAZARD_CAP,
    Erlang,
    Exponential,
    Gamma,
    GeneralizedPareto,
    Hyperexponential,
    Uniform,
    fit_gpd_mle,
    from_rate,
    zipf_rates,
)

RATE = 2.0
FAMILIES = ("exponential", "gpd", "uniform", "hyperexponential", "gamma", "erlang")


def age_grid(dist, points=100):
    """Age grid inside the support, away from survival underflow."""
    if isinstance(dist, Uniform):
        return np.linspace(0.02, 0.95, points) * dist.upper
    return np.linspace(0.02, 3.0, points) * dist.mean_irt()


class TestClosedForms:
    def test_frozen_gamma_hazard(self):
        # erfc identity: S(t) = erfc(sqrt(t)) for Gamma(1/2, 1)
        assert Gamma(0.5, 1.0).hazard_rate(1.0) == pytest.approx(1.3194837571173956, rel=1e-12)

    def test_frozen_erlang_hazard(self):
        # f = 9 t exp(-3t), S = (1 + 3t) exp(-3t)
        assert Erlang(2, 3.0).hazard_rate(0.7) == pytest.approx(2.032258064516129, rel=1e-12)

    def test_frozen_hyper_hazard(self):
        d = from_rate("hyperexponential", RATE, scv=2.0)
        assert d.theta1 == pytest.approx(0.8452994616207485, rel=1e-12)
        assert d.theta2 == pytest.approx(3.1547005383792515, rel=1e-12)
        assert d.hazard_rate(0.3) == pytest.approx(2.349086732642046, rel=1e-12)

    def test_frozen_gpd_cdf(self):
        assert GeneralizedPareto(0.48, 1.0).cdf(2.0) == pytest.approx(0.7538877761563318, rel=1e-12)

    def test_exponential_constant_hazard(self):
        d = Exponential(3.7)
        ages = np.linspace(0, 10, 50)
        np.testing.assert_array_equal(d.hazard_rate(ages), np.full(50, 3.7))

    def test_uniform_hazard_and_domain(self):
        d = Uniform(4.0)
        assert d.hazard_rate(0.0) == 0.25
        assert d.hazard_rate(3.0) == 1.0
        with pytest.raises(ValueError):
            d.hazard_rate(4.0)
        with pytest.raises(ValueError):
            d.hazard_rate(5.0)

    def test_gamma_age_zero_cap(self):
        assert Gamma(0.5, 2.0).hazard_rate(0.0) == HAZARD_CAP
        # shape > 1 starts at zero instead
        assert Gamma(2.0, 1.0).hazard_rate(0.0) == 0.0
        assert Erlang(2, 1.0).hazard_rate(0.0) == 0.0

    def test_gamma_tail_limit(self):
        # far out the hazard settles on 1/scale (from above for DHR,
        # below for IHR) instead of underflowing to nan
        g = Gamma(0.5, 2.0)
        assert g.hazard_rate(1e9) == pytest.approx(0.5, rel=1e-8)
        assert g.hazard_rate(1e9) >= 0.5
        e = Erlang(2, 3.0)
        assert e.hazard_rate(1e9) == pytest.approx(3.0, rel=1e-8)
        assert e.hazard_rate(1e9) <= 3.0

    def test_erlang_matches_gamma(self):
        ages = np.linspace(0, 5, 37)
        np.testing.assert_allclose(
            Erlang(2, 3.0).hazard_rate(ages),
            Gamma(2.0, 1.0 / 3.0).hazard_rate(ages),
            rtol=1e-12,
        )

    def test_erlang_integer_shape_required(self):
        with pytest.raises(ValueError):
            Erlang(0.2, 1.0)
        with pytest.raises(ValueError):
            Erlang(0, 1.0)

    def test_age_validation(self):
        d = Exponential(1.0)
        with pytest.raises(ValueError):
            d.hazard_rate(-0.1)
        with pytest.raises(ValueError):
            d.hazard_rate(float("nan"))
        with pytest.raises(ValueError):
            d.hazard_rate(float("inf"))

    def test_scalar_and_array_agree_bitwise(self):
        for kind in FAMILIES:
            d = from_rate(kind, RATE)
            ages = age_grid(d, 23)
            vec = np.asarray(d.hazard_rate(ages))
            sca = np.array([d.hazard_rate(float(a)) for a in ages])
            np.testing.assert_array_equal(vec, sca, err_msg=kind)


class TestHazardVsCdf:
    """Central finite difference of -log(survival) must match the hazard."""

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_finite_difference(self, kind):
        d = from_rate(kind, RATE)
        ages = age_grid(d)
        delta = 1e-6 * d.mean_irt()
        lo = np.minimum(delta, ages / 2)
        fd = (d.cdf(ages + delta) - d.cdf(ages - lo)) / (
            (delta + lo) * (1.0 - d.cdf(ages))
        )
        h = d.hazard_rate(ages)
        np.testing.assert_allclose(h, fd, rtol=1e-4)

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_cdf_shape(self, kind):
        d = from_rate(kind, RATE)
        ages = age_grid(d)
        c = np.asarray(d.cdf(ages))
        assert c[0] >= 0 and np.all(np.diff(c) >= 0) and np.all(c <= 1)
        assert d.cdf(0.0) == pytest.approx(0.0, abs=1e-15)
        assert d.cdf(-1.0) == 0.0


class TestMonotonicity:
    DECREASING = ("gpd", "hyperexponential", "gamma")
    INCREASING = ("uniform", "erlang")

    @pytest.mark.parametrize("kind", DECREASING)
    def test_dhr(self, kind):
        d = from_rate(kind, RATE)
        h = np.asarray(d.hazard_rate(age_grid(d)))
        assert np.all(np.diff(h) <= 0), f"{kind} hazard must be non-increasing"
        assert np.any(np.diff(h) < 0)

    @pytest.mark.parametrize("kind", INCREASING)
    def test_ihr(self, kind):
        d = from_rate(kind, RATE)
        h = np.asarray(d.hazard_rate(age_grid(d)))
        assert np.all(np.diff(h) >= 0), f"{kind} hazard must be non-decreasing"
        assert np.any(np.diff(h) > 0)

    def test_chr(self):
        d = from_rate("exponential", RATE)
        h = np.asarray(d.hazard_rate(age_grid(d)))
        assert np.all(h == h[0])


class TestMeansAndRates:
    @pytest.mark.parametrize("kind", FAMILIES)
    def test_from_rate_mean(self, kind):
        for rate in (0.25, 1.0, 7.3):
            d = from_rate(kind, rate)
            assert d.mean_irt() == pytest.approx(1.0 / rate, rel=1e-12)
            assert d.rate() == pytest.approx(rate, rel=1e-12)

    def test_mean_against_survival_quadrature(self):
        # E[X] = integral of survival; independent of the closed forms
        for kind in FAMILIES:
            d = from_rate(kind, RATE)
            upper = d.upper if isinstance(d, Uniform) else np.inf
            m, err = integrate.quad(lambda t: 1.0 - d.cdf(t), 0, upper, limit=200)
            assert m == pytest.approx(d.mean_irt(), rel=1e-6), kind

    def test_gpd_infinite_mean(self):
        with pytest.raises(ValueError):
            GeneralizedPareto(1.0, 1.0).mean_irt()
        with pytest.raises(ValueError):
            GeneralizedPareto(2.5, 1.0).mean_irt()

    def test_hyper_scv(self):
        for scv in (1.5, 2.0, 4.0):
            d = from_rate("hyperexponential", 1.0, scv=scv)
            assert d.scv() == pytest.approx(scv, rel=1e-9)

    def test_from_rate_validation(self):
        with pytest.raises(ValueError):
            from_rate("exponential", 0.0)
        with pytest.raises(ValueError):
            from_rate("weibull", 1.0)
        with pytest.raises(ValueError):
            from_rate("gpd", 1.0, shape=1.2)
        with pytest.raises(ValueError):
            from_rate("gamma", 1.0, bogus=3)


class TestSampling:
    @pytest.mark.parametrize("kind", FAMILIES)
    def test_kolmogorov_smirnov(self, kind):
        d = from_rate(kind, RATE)
        rng = np.random.default_rng(2024)
        x = d.sample(rng, 20000)
        assert np.all(x >= 0)
        res = stats.kstest(x, lambda t: np.asarray(d.cdf(t)))
        assert res.pvalue > 1e-3, (kind, res)

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_sample_mean(self, kind):
        d = from_rate(kind, RATE)
        rng = np.random.default_rng(7)
        x = d.sample(rng, 200000)
        tol = 0.2 if kind == "gpd" else 0.02  # heavy tail converges slowly
        assert np.mean(x) == pytest.approx(d.mean_irt(), rel=tol)

    def test_scalar_draw(self):
        rng = np.random.default_rng(0)
        for kind in FAMILIES:
            v = from_rate(kind, RATE).sample(rng)
            assert np.isscalar(v) or np.ndim(v) == 0
            assert float(v) > 0

    def test_deterministic_given_seed(self):
        d = from_rate("gpd", 1.0)
        a = d.sample(np.random.default_rng(5), 100)
        b = d.sample(np.random.default_rng(5), 100)
        np.testing.assert_array_equal(a, b)


class TestZipfRates:
    def test_frozen_mean_quadrature(self):
        assert zipf_rates(1, 0.8, 5.0)[0] == pytest.approx(5.0, rel=1e-15)

    def test_sum_and_order(self):
        r = zipf_rates(1000, 0.8, 2.5)
        assert r.sum() == pytest.approx(2.5, rel=1e-12)
        assert np.all(np.diff(r) < 0)

    def test_ratios(self):
        r = zipf_rates(50, 1.3)
        assert r[0] / r[9] == pytest.approx(10.0**1.3, rel=1e-12)

    def test_uniform_when_exponent_zero(self):
        r = zipf_rates(10, 0.0, 1.0)
        np.testing.assert_allclose(r, 0.1, rtol=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            zipf_rates(0, 0.8)
        with pytest.raises(ValueError):
            zipf_rates(5, -1.0)
        with pytest.raises(ValueError):
            zipf_rates(5, 0.8, 0.0)


class TestGpdFit:
    def test_recovers_heavy_tail(self):
        rng = np.random.default_rng(42)
        x = GeneralizedPareto(0.48, 1.0).sample(rng, 20000)
        fit = fit_gpd_mle(x)
        assert fit.converged
        assert fit.shape == pytest.approx(0.48, abs=0.05)
        assert fit.scale == pytest.approx(1.0, abs=0.1)
        assert fit.n_samples == 20000

    def test_exponential_data_gives_small_shape(self):
        rng = np.random.default_rng(11)
        fit = fit_gpd_mle(rng.exponential(2.0, 20000))
        assert fit.converged
        assert 0.0 <= fit.shape <= 0.03
        assert fit.scale == pytest.approx(2.0, rel=0.05)

    def test_loglik_is_maximum_nearby(self):
        rng = np.random.default_rng(3)
        x = GeneralizedPareto(0.3, 2.0).sample(rng, 5000)
        fit = fit_gpd_mle(x)

        def ll(k, s):
            return -x.size * math.log(s) - (1 + 1 / k) * np.sum(np.log1p(k * x / s))

        for dk in (-0.02, 0.02):
            for ds in (-0.05, 0.05):
                assert ll(fit.shape + dk, fit.scale + ds) <= fit.log_likelihood + 1e-6

    def test_shape_clamped_to_box(self):
        rng = np.random.default_rng(9)
        # shape far above the box; fitted shape must sit on the boundary
        x = GeneralizedPareto(8.0, 1.0).sample(rng, 5000)
        fit = fit_gpd_mle(x)
        assert 0.0 <= fit.shape <= 5.0

    def test_insufficient_data(self):
        with pytest.raises(ValueError):
            fit_gpd_mle(np.ones(9))

    def test_bad_samples(self):
        with pytest.raises(ValueError):
            fit_gpd_mle(np.array([1.0] * 10 + [-2.0]))
        with pytest.raises(ValueError):
            fit_gpd_mle(np.array([1.0] * 10 + [float("nan")]))

    def test_fallback_when_search_fails(self, monkeypatch):
        from scipy import optimize

        def boom(*a, **kw):
            raise ValueError("forced failure")

        monkeypatch.setattr(optimize, "minimize_scalar", boom)
        rng = np.random.default_rng(1)
        x = rng.exponential(1.0, 100)
        fit = fit_gpd_mle(x)
        assert not fit.converged
        assert fit.scale > 0 and 0.0 <= fit.shape <= 5.0

    def test_distribution_roundtrip(self):
        rng = np.random.default_rng(12)
        fit = fit_gpd_mle(GeneralizedPareto(0.4, 1.0).sample(rng, 10000))
        d = fit.distribution()
        assert isinstance(d, GeneralizedPareto)
        assert d.shape == fit.shape and d.scale == fit.scale


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(FAMILIES),
    rate=st.floats(0.05, 50.0),
    frac=st.floats(0.0, 0.99),
)
def test_hazard_positive_inside_support(kind, rate, frac):
    d = from_rate(kind, rate)
    age = frac * (d.upper if isinstance(d, Uniform) else 3.0 / rate)
    h = d.hazard_rate(age)
    assert np.isfinite(h)
    assert h >= 0
    assert h <= HAZARD_CAP


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(FAMILIES),
    rate=st.floats(0.05, 50.0),
    t1=st.floats(0.0, 10.0),
    t2=st.floats(0.0, 10.0),
)
def test_cdf_monotone(kind, rate, t1, t2):
    d = from_rate(kind, rate)
    a, b = sorted((t1 / rate, t2 / rate))
    assert d.cdf(a) <= d.cdf(b) + 1e-15

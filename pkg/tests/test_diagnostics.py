import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from conftest import samples_from_psi
from synantag.diagnostics import (autocorrelation, credible_interval, diagnose, effective_sample_size,
                                  interval_coverage, monitored_scalars, posterior_predictive)
from synantag.errors import ShapeError
from synantag.model import Dataset
from synantag.sampler import SamplerConfig, run_chain
from synantag.splines import eval_design


def ar1(rng, n, rho):
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - rho * rho)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + e[t]
    return x


class TestAutocorrelation:
    def test_against_direct_sum(self, rng):
        x = rng.standard_normal(64)
        xc = x - x.mean()
        direct = np.array([np.sum(xc[: 64 - k] * xc[k:]) for k in range(64)]) / np.sum(xc * xc)
        assert np.allclose(autocorrelation(x), direct)


class TestESS:
    def test_white_noise(self, rng):
        assert effective_sample_size(rng.standard_normal(10_000)) == pytest.approx(10_000, rel=0.1)

    def test_ar1(self, rng):
        n = 100_000
        assert effective_sample_size(ar1(rng, n, 0.5)) == pytest.approx(n / 3, rel=0.1)

    def test_repeated_chain(self, rng):
        x = ar1(rng, 5000, 0.3)
        assert effective_sample_size(np.tile(x, 2)) < 2 * effective_sample_size(x)

    def test_capped_at_n(self):
        x = np.tile([1.0, -1.0], 50)  # negatively correlated
        assert 0 < effective_sample_size(x) <= 100

    def test_constant_chain(self):
        with pytest.warns(RuntimeWarning, match="constant"):
            assert effective_sample_size(np.full(50, 2.0)) == 50.0

    @pytest.mark.parametrize("x", [np.arange(9.0), np.r_[np.arange(20.0), np.nan]])
    def test_invalid(self, x):
        with pytest.raises(ShapeError):
            effective_sample_size(x)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(10, 300), elements=st.floats(-1e3, 1e3)),
           st.floats(0.01, 100), st.floats(-100, 100))
    def test_affine_invariant(self, x, a, b):
        if np.ptp(x) < 1e-6:
            return
        e0 = effective_sample_size(x)
        assert effective_sample_size(a * x + b) == pytest.approx(e0, rel=1e-6)
        assert 0 < e0 <= x.size


class TestCoverage:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 50), st.integers(0, 2**32 - 1))
    def test_equals_counting(self, n, seed):
        r = np.random.default_rng(seed)
        lo = r.normal(size=n)
        hi = lo + r.exponential(size=n)
        v = r.normal(size=n)
        count = sum(1 for a, b, c in zip(lo, hi, v) if a <= c <= b)
        assert interval_coverage(lo, hi, v) == count / n

    def test_closed_endpoints(self):
        assert interval_coverage([0.0, 0.0], [1.0, 1.0], [0.0, 1.0]) == 1.0

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            interval_coverage([0.0], [1.0, 2.0], [0.5])
        with pytest.raises(ShapeError):
            interval_coverage([], [], [])

    def test_credible_interval(self, rng):
        lo, hi = credible_interval(rng.standard_normal((200_000, 2)))
        assert np.allclose(lo, -1.96, atol=0.03) and np.allclose(hi, 1.96, atol=0.03)


def constant_samples(bases, T, alpha, sigma2):
    s = samples_from_psi(np.zeros((T, 0, 4, bases.m)), bases, pairs=[])
    s.alpha[:] = alpha
    s.sigma2[:] = sigma2
    return s


class TestPredictive:
    def test_degenerate_samples(self, bases, rng):
        y = rng.normal(size=30)
        data = Dataset(y, rng.random((30, 1)))
        check = posterior_predictive(constant_samples(bases, 20, 0.3, 0.0), data, bases, rng)
        raw = y - 0.3
        assert np.allclose(check.mean, 0.3)
        assert np.allclose(check.residuals, raw / np.std(raw, ddof=1))

    def test_exact_model_coverage(self, bases, rng):
        y = rng.normal(0.5, 1.0, size=4000)
        data = Dataset(y, rng.random((4000, 1)))
        check = posterior_predictive(constant_samples(bases, 500, 0.5, 1.0), data, bases, rng)
        assert check.coverage == pytest.approx(0.95, abs=0.015)
        assert check.sd == pytest.approx(np.ones(4000), abs=0.15)

    def test_empty(self, bases, rng):
        with pytest.raises(ShapeError):
            posterior_predictive(constant_samples(bases, 0, 0.0, 1.0), Dataset(np.ones(3), np.zeros((3, 1))),
                                 bases)

    @pytest.fixture(scope="class")
    @staticmethod
    def model_fit(bases):
        """A single-exposure fit to data simulated from the regression model itself."""
        r = np.random.default_rng(11)
        n = 300
        X = r.random((n, 1))
        gamma = np.linalg.cholesky(bases.sigma_main.cov) @ r.standard_normal(bases.d)
        mu = 0.4 + eval_design(bases.main, X[:, 0]) @ gamma
        data = Dataset(mu + 0.5 * r.standard_normal(n), X)
        samples = run_chain(data, SamplerConfig(iterations=3000, burnin=1000, seed=4), bases)
        return data, samples

    def test_fit_coverage(self, model_fit, bases):
        data, samples = model_fit
        check = posterior_predictive(samples, data, bases, np.random.default_rng(2))
        assert 0.92 <= check.coverage <= 0.98

    def test_fit_residuals_normal(self, model_fit, bases):
        data, samples = model_fit
        r = posterior_predictive(samples, data, bases, np.random.default_rng(3)).residuals
        ad = stats.anderson(r, "norm")
        # p > 0.01 is equivalent to staying below the 1% critical value
        assert ad.statistic < ad.critical_values[list(ad.significance_level).index(1.0)]
        summary = posterior_predictive(samples, data, bases, np.random.default_rng(3)).residual_summary()
        assert abs(summary["mean"]) < 0.2 and summary["variance"] == pytest.approx(1.0, abs=0.25)

    def test_report(self, model_fit, bases):
        data, samples = model_fit
        report = diagnose(samples, data, bases, np.random.default_rng(0))
        d = json.loads(report.to_json())
        assert set(d["ess"]) == {"sigma2", "nu2", "alpha"}
        for k, v in report.ess.items():
            assert 0 < v <= samples.n_draws
            assert report.ess_fraction[k] == pytest.approx(v / samples.n_draws)
        assert 0 <= d["predictive_coverage_95"] <= 1
        assert d["n_draws"] == samples.n_draws == 2000

    def test_monitored_names(self, bases):
        s = samples_from_psi(np.zeros((12, 2, 4, bases.m)), bases, pairs=[(0, 1), (1, 2)])
        assert list(monitored_scalars(s)) == ["sigma2", "nu2", "alpha", "kappa_1_2", "kappa_2_3"]

    def test_short_chain_skips_ess(self, bases):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            report = diagnose(constant_samples(bases, 5, 0.0, 1.0))
        assert report.ess == {} and report.n_draws == 5

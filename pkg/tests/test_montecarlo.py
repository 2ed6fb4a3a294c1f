import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvrhdg.montecarlo import (A_95, A_999, Estimate, clt_halfwidth, confidence, mc_estimates, mc_mean_var,
                               mc_rb_estimate, mc_rb_expectation_bound, mc_rb_total_bound,
                               mc_rb_variance_bound, optimal_cv_gamma)
from mvrhdg.stochastic import SampleStream, draw_samples
from oracles import sample_variance


class TestBasicEstimators:
    def test_small_example(self):
        assert mc_mean_var([1.0, 2.0, 3.0]) == (2.0, 1.0)

    def test_constant_samples(self):
        E, V = mc_estimates(np.full(50, 0.25))
        assert E.value == 0.25 and V.value == 0.0
        assert E.half_width == 0.0 and V.half_width == 0.0

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            mc_mean_var([1.0])
        with pytest.raises(ValueError):
            mc_mean_var([1.0, np.nan])
        with pytest.raises(ValueError):
            clt_halfwidth(1.0, 1)
        with pytest.raises(ValueError):
            Estimate(0.0, -1.0, (3,))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_matches_reference_variance(self, xs):
        E, V = mc_mean_var(xs)
        assert E == pytest.approx(math.fsum(xs) / len(xs), abs=1e-9)
        assert V == pytest.approx(sample_variance(xs), rel=1e-9, abs=1e-6)

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=40), st.floats(-100, 100))
    @settings(max_examples=40, deadline=None)
    def test_variance_shift_invariant(self, xs, c):
        assert mc_mean_var(np.array(xs) + c)[1] == pytest.approx(mc_mean_var(xs)[1], rel=1e-8, abs=1e-9)

    def test_halfwidth_decays_as_inverse_sqrt(self):
        h = [clt_halfwidth(2.0, M) for M in (100, 400, 1600)]
        assert h[0] / h[1] == pytest.approx(2.0) and h[1] / h[2] == pytest.approx(2.0)

    def test_confidence_levels(self):
        assert confidence(A_95) == pytest.approx(0.95, abs=5e-4)
        assert confidence(A_999) == pytest.approx(0.999, abs=5e-4)
        assert Estimate(1.0, 0.1, (10,)).confidence == confidence(A_95)


class TestStatisticalProperties:
    def test_expectation_interval_coverage(self):
        rng = np.random.default_rng(2024)
        R, M = 4000, 100
        x = rng.exponential(1.0, (R, M))
        hits = 0
        for row in x:
            E, _ = mc_estimates(row)
            hits += abs(E.value - 1.0) <= E.half_width
        p = hits / R
        assert abs(p - 0.95) < 4 * math.sqrt(0.95 * 0.05 / R) + 0.01

    def test_variance_estimator_unbiased(self):
        rng = np.random.default_rng(7)
        R, M = 20000, 5
        vs = np.array([mc_mean_var(r)[1] for r in rng.standard_normal((R, M))])
        assert abs(vs.mean() - 1.0) < 4 * vs.std() / math.sqrt(R)


class TestMCRBBounds:
    def test_variance_bound_formula(self, rng):
        s = rng.uniform(0.5, 1.0, 25)
        d = rng.uniform(0.0, 1e-3, 25)
        dE = mc_rb_expectation_bound(d)
        ref = sum((d[m] + dE) * (d[m] + 2 * abs(s[m])) for m in range(25)) / 24
        assert mc_rb_variance_bound(s, d, dE) == pytest.approx(ref, rel=1e-14)

    def test_total_bound_tends_to_bias_term(self):
        seq = [mc_rb_total_bound(0.07, 1e-3, M, A_95, 2e-3) for M in (10, 10**3, 10**5, 10**7)]
        assert all(a > b for a, b in zip(seq, seq[1:]))
        assert seq[-1] - 2e-3 < 2e-4

    def test_rejects_negative_bounds(self):
        with pytest.raises(ValueError):
            mc_rb_expectation_bound([1e-3, -1e-3])
        with pytest.raises(ValueError):
            mc_rb_total_bound(0.1, -1.0, 10, A_95, 0.0)

    def test_sample_bounds_are_rigorous(self, model, hdg_ch, test_points):
        ys = test_points[:400]
        s_h = hdg_ch.full(ys)
        for N in (2, 5, 9):
            s_N, d = hdg_ch.rb_with_bound(N, ys)
            dE = mc_rb_expectation_bound(d)
            assert abs(mc_mean_var(s_h)[0] - mc_mean_var(s_N)[0]) <= dE
            assert abs(mc_mean_var(s_h)[1] - mc_mean_var(s_N)[1]) <= mc_rb_variance_bound(s_N, d, dE)

    def test_estimate_contains_components(self, hdg_ch, test_points):
        s_N, d = hdg_ch.rb_with_bound(4, test_points[:100])
        est, parts = mc_rb_estimate(s_N, d)
        assert est.M == (100,)
        assert est.half_width == pytest.approx(
            mc_rb_total_bound(parts["V"], parts["delta_V"], 100, A_95, parts["delta_E"]))


class TestControlVariate:
    def test_exact_linear_relation(self, rng):
        y = rng.standard_normal(200)
        assert optimal_cv_gamma(3 * y + 1, y) == pytest.approx(3.0, rel=1e-12)

    def test_independent_is_near_zero(self):
        dom_draws = draw_samples(SampleStream(3), __import__("mvrhdg").ParameterDomain.uniform(2, 0, 1), 20000)
        assert abs(optimal_cv_gamma(dom_draws[:, 0], dom_draws[:, 1])) < 0.05

    def test_reduces_variance(self, rng):
        y = rng.standard_normal(5000)
        x = y + 0.1 * rng.standard_normal(5000)
        g = optimal_cv_gamma(x, y)
        assert mc_mean_var(x - g * y)[1] < 0.05 * mc_mean_var(x)[1]


class TestSpecExamples:
    def test_tiny_samples(self):
        assert mc_mean_var([1.0, 1.0, 1.0, 1.0]) == (1.0, 0.0)
        assert mc_mean_var([0.0, 2.0]) == (1.0, 2.0)

    def test_halfwidth_values(self):
        assert clt_halfwidth(4.0, 100, 2.0) == pytest.approx(0.4, rel=1e-15)
        assert clt_halfwidth(0.0, 17) == 0.0

    def test_zero_rb_terms(self, rng):
        s = rng.uniform(0.0, 1.0, 40)
        zero = np.zeros(40)
        assert mc_rb_expectation_bound(zero) == 0.0
        assert mc_rb_variance_bound(s, zero, 0.0) == 0.0
        est, parts = mc_rb_estimate(s, zero)
        assert est.half_width == pytest.approx(clt_halfwidth(parts["V"], 40), rel=1e-15)

    def test_total_bound_limit(self):
        assert mc_rb_total_bound(0.07, 0.02, 10**16, A_95, 0.11) == pytest.approx(0.11, abs=1e-8)

    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1e-2), st.floats(0, 1e-2)), min_size=2, max_size=30))
    @settings(max_examples=40, deadline=None)
    def test_bounds_monotone(self, rows):
        s, d, extra = map(np.array, zip(*rows))
        dE, dE2 = mc_rb_expectation_bound(d), mc_rb_expectation_bound(d + extra)
        assert dE2 >= dE
        dV, dV2 = mc_rb_variance_bound(s, d, dE), mc_rb_variance_bound(s, d + extra, dE2)
        assert dV2 >= dV
        assert mc_rb_total_bound(0.1, dV2, len(s), A_95, dE2) >= mc_rb_total_bound(0.1, dV, len(s), A_95, dE)

    def test_gamma_trivial(self, rng):
        x = rng.standard_normal(100)
        assert optimal_cv_gamma(x, x) == pytest.approx(1.0, rel=1e-14)
        assert optimal_cv_gamma(x, 2 * x) == pytest.approx(0.5, rel=1e-14)
        with pytest.raises(ZeroDivisionError):
            optimal_cv_gamma(x, np.full(100, 3.0))

    def test_variance_reduction_identity(self, rng):
        x = rng.standard_normal(300)
        y = 0.7 * x + rng.standard_normal(300)
        g = optimal_cv_gamma(x, y)
        rho = np.corrcoef(x, y)[0, 1]
        assert mc_mean_var(x - g * y)[1] == pytest.approx(mc_mean_var(x)[1] * (1 - rho**2), rel=1e-12)


class TestBenchmark:
    def test_gamma_near_one(self, channels, test_points):
        g = optimal_cv_gamma(channels.full(test_points), channels.rb(5, test_points))
        assert 0.9 <= g <= 1.1

    def test_clt_coverage_at_1e4(self, channels, domain):
        from mvrhdg.stochastic import analytic_moments_1d
        E = analytic_moments_1d(domain)[0]
        R, M, hits, errs = 1000, 10**4, 0, []
        for r in range(R):
            est, _ = mc_estimates(channels.full(draw_samples(SampleStream(7, 0, r), domain, M)))
            errs.append(abs(est.value - E))
            hits += errs[-1] <= est.half_width
        assert 0.93 <= hits / R <= 0.97
        assert 5e-4 <= np.mean(errs) <= 5e-3  # same order as 2e-3

    def test_unbiased_tiny_replications(self, channels, domain):
        from mvrhdg.stochastic import analytic_moments_1d
        E, V = analytic_moments_1d(domain)
        ests = np.array([mc_mean_var(channels.full(draw_samples(SampleStream(8, 0, r), domain, 5)))
                         for r in range(10**4)])
        se = ests.std(axis=0, ddof=1) / math.sqrt(len(ests))
        assert abs(ests[:, 0].mean() - E) < 4 * se[0]
        assert abs(ests[:, 1].mean() - V) < 4 * se[1]

    def test_total_bound_coverage(self, channels, domain):
        from mvrhdg.stochastic import analytic_moments_1d
        E = analytic_moments_1d(domain)[0]
        R, hits = 200, 0
        for r in range(R):
            s_N, d = channels.rb_with_bound(9, draw_samples(SampleStream(9, 0, r), domain, 100))
            est, _ = mc_rb_estimate(s_N, d)
            hits += abs(est.value - E) <= est.half_width
        assert hits / R >= 0.95

    @pytest.mark.xfail(strict=True, reason="the bound average here is about 8e-3, below the 1e-1 scale")
    def test_expectation_bound_scale(self, channels, domain):
        _, d = channels.rb_with_bound(9, draw_samples(SampleStream(1, 0), domain, 1000))
        assert 1.1e-2 <= mc_rb_expectation_bound(d) <= 1.1

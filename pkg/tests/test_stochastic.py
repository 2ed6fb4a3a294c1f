import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvrhdg.stochastic import (ParameterDomain, PiecewiseConstantField, SampleStream, analytic_moments_1d,
                               analytic_output_1d, analytic_solution_1d, draw_samples, output_coefficients,
                               piecewise_constant_expansion)
from oracles import output_quadrature, u_double_integral, u_quadrature


class TestDomain:
    def test_rejects_bad_bounds(self):
        with pytest.raises(ValueError):
            ParameterDomain(np.array([[1.0, 0.5]]))
        with pytest.raises(ValueError):
            ParameterDomain(np.zeros((0, 2)))

    def test_unknown_density_tag(self):
        with pytest.raises(ValueError, match="density"):
            ParameterDomain(np.array([[0.0, 1.0]]), ("beta",))

    def test_zero_mean_and_shifted_forms(self):
        centred = ParameterDomain.uniform(3, -0.5, 0.5)
        shifted = ParameterDomain.uniform(3, 0.1, 1.0)
        assert centred.contains([0.0, 0.4, -0.5])
        assert not shifted.contains([0.0, 0.5, 0.5])


class TestSampling:
    def test_seeded_determinism(self):
        dom = ParameterDomain.uniform(2, 0.0, 1.0)
        a = draw_samples(SampleStream(7), dom, 3)
        b = draw_samples(SampleStream(7), dom, 3)
        assert a.shape == (3, 2)
        assert a.tobytes() == b.tobytes()
        assert np.all((a >= 0) & (a <= 1))

    def test_counter_advances_by_mQ(self):
        dom = ParameterDomain.uniform(4, 0.0, 1.0)
        s = SampleStream(3)
        draw_samples(s, dom, 5)
        assert s.counter == 20

    def test_clone_continues_identically(self):
        dom = ParameterDomain.uniform(3, 0.0, 1.0)
        s = SampleStream(11, level_tag=2)
        draw_samples(s, dom, 4)
        c = s.clone()
        assert draw_samples(s, dom, 6).tobytes() == draw_samples(c, dom, 6).tobytes()

    def test_uniform_mean(self):
        dom = ParameterDomain.uniform(10, 0.1, 1.0)
        ys = draw_samples(SampleStream(5), dom, 100_000)
        sigma = 0.9 / math.sqrt(12) / math.sqrt(ys.shape[0])
        assert np.all(np.abs(ys.mean(axis=0) - 0.55) < 3 * sigma)

    def test_level_tags_independent(self):
        dom = ParameterDomain.uniform(1, 0.0, 1.0)
        a = draw_samples(SampleStream(9, level_tag=0), dom, 10_000)[:, 0]
        b = draw_samples(SampleStream(9, level_tag=1), dom, 10_000)[:, 0]
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.05

    def test_m_must_be_positive(self):
        with pytest.raises(ValueError):
            draw_samples(SampleStream(1), ParameterDomain.uniform(1, 0, 1), 0)

    @given(st.integers(0, 2**64 - 1), st.integers(0, 5), st.integers(1, 20))
    @settings(max_examples=30, deadline=None)
    def test_reproducible_for_any_key(self, seed, tag, m):
        dom = ParameterDomain.uniform(3, -1.0, 2.0)
        a = draw_samples(SampleStream(seed, tag), dom, m)
        b = draw_samples(SampleStream(seed, tag), dom, m)
        assert a.tobytes() == b.tobytes()
        assert np.all((a >= -1) & (a <= 2))


class TestAnalyticSolution:
    def test_constant_field_profile(self):
        assert analytic_solution_1d([1.0], 0.5) == pytest.approx(0.375, abs=1e-15)
        assert analytic_solution_1d([1.0], 0.0) == 0.0

    def test_two_cells_against_double_integral(self):
        y = [0.5, 1.0]
        assert analytic_solution_1d(y, 1.0) == pytest.approx(u_double_integral(y, 1.0), abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            analytic_solution_1d([0.5, 0.0], 0.3)
        with pytest.raises(ValueError):
            analytic_output_1d([-1.0])

    @given(st.lists(st.floats(0.1, 1.0), min_size=1, max_size=6), st.floats(0.0, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_matches_quadrature(self, y, x):
        assert analytic_solution_1d(y, x) == pytest.approx(u_quadrature(y, x), rel=1e-10, abs=1e-13)


class TestAnalyticOutput:
    def test_trivial_values(self):
        assert analytic_output_1d([1.0]) == pytest.approx(1 / 3, abs=1e-15)
        assert analytic_output_1d(np.ones(10)) == pytest.approx(1 / 3, abs=1e-15)
        assert analytic_output_1d(np.full(10, 0.1)) == pytest.approx(10 / 3, rel=1e-14)

    def test_coefficients_exact(self):
        c = output_coefficients(10)
        assert sum(c) == Fraction(1, 3)
        assert all(isinstance(v, Fraction) for v in c)

    def test_hundred_points_against_quadrature(self, rng):
        ys = rng.uniform(0.1, 1.0, (100, 10))
        ref = np.array([output_quadrature(y) for y in ys])
        assert np.max(np.abs(analytic_output_1d(ys) - ref) / ref) < 1e-10

    def test_source_scaling(self):
        y = np.linspace(0.2, 0.9, 10)
        assert analytic_output_1d(y, 3.0) == pytest.approx(3 * analytic_output_1d(y), rel=1e-15)


class TestMoments:
    def test_benchmark_values(self):
        E, V = analytic_moments_1d(ParameterDomain.uniform(10, 0.1, 1.0))
        assert E == pytest.approx(math.log(10) / 0.9 / 3, rel=1e-14)
        assert E == pytest.approx(0.852809, abs=5e-7)
        c2 = float(sum(c * c for c in output_coefficients(10)))
        assert V == pytest.approx(c2 * (10 - (math.log(10) / 0.9) ** 2), rel=1e-13)
        assert V == pytest.approx(0.0687, abs=5e-5)

    def test_degenerate_box(self):
        E, V = analytic_moments_1d(ParameterDomain.uniform(10, 1.0, 1.0))
        assert E == pytest.approx(1 / 3, abs=1e-15)
        assert V == 0.0

    def test_rejects_nonpositive_support(self):
        with pytest.raises(ValueError):
            analytic_moments_1d(ParameterDomain.uniform(2, 0.0, 1.0))

    @pytest.mark.slow
    def test_monte_carlo_cross_check(self):
        dom = ParameterDomain.uniform(10, 0.1, 1.0)
        E, V = analytic_moments_1d(dom)
        s = np.concatenate([analytic_output_1d(draw_samples(SampleStream(77, 0, r), dom, 1_000_000)) for r in range(10)])
        se = math.sqrt(V / s.size)
        assert abs(s.mean() - E) < 4 * se
        assert abs(s.var(ddof=1) - V) < 4 * math.sqrt(np.var((s - s.mean()) ** 2) / s.size)

    def test_mean_error_decays_half_order(self):
        dom = ParameterDomain.uniform(10, 0.1, 1.0)
        E, _ = analytic_moments_1d(dom)
        Ms = [10**2, 10**3, 10**4, 10**5, 10**6]
        errs = []
        for M in Ms:
            reps = [abs(analytic_output_1d(draw_samples(SampleStream(4, 0, r), dom, M)).mean() - E) for r in range(30)]
            errs.append(np.mean(reps))
        slope = np.polyfit(np.log(Ms), np.log(errs), 1)[0]
        assert -0.6 <= slope <= -0.4


class TestFields:
    def test_piecewise_constant_rejects_straddling(self):
        f = PiecewiseConstantField([0.0, 0.5, 1.0], [1.0, 2.0])
        with pytest.raises(ValueError, match="straddles"):
            f.element_values(0.4, 0.6, np.array([0.5]))

    def test_expansion_evaluation(self):
        exp = piecewise_constant_expansion(4)
        k = exp.at(np.array([1.0, 2.0, 3.0, 4.0]))
        assert k.element_values(0.5, 0.75, np.array([0.6]))[0] == 3.0

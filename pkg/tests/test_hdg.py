import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import Legendre

from mvrhdg.hdg import (BoundaryCondition, DiscreteSpaces, FieldSolution, Mesh1D, NonsolvableParameter,
                        assemble_affine, assemble_direct, dump_triplets, element_matrix, evaluate_output, lift,
                        load_triplets, outputs_batch, solve_batch, solve_full, solve_monolithic)
from mvrhdg.stochastic import (ConstantField, ParameterDomain, RandomFieldExpansion, analytic_output_1d,
                               analytic_solution_1d, piecewise_constant_expansion)
from oracles import global_form, local_form


def frob_rel(A, B):
    A = A.toarray() if sp.issparse(A) else A
    B = B.toarray() if sp.issparse(B) else B
    return np.linalg.norm(A - B) / np.linalg.norm(A)


class TestMesh:
    def test_validation(self):
        with pytest.raises(ValueError):
            Mesh1D(np.array([0.0, 0.6, 0.5, 1.0]))
        with pytest.raises(ValueError):
            Mesh1D(np.array([0.1, 1.0]))

    def test_trace_dimension(self, system):
        # Dirichlet node removed: E traces for E + 1 faces
        sp_ = system.spaces
        assert system.n == sp_.n_u + sp_.mesh.n_elements
        assert sp_.n_local == sp_.p + 1


class TestAssembly:
    def test_single_parameter_affinity(self):
        spaces = DiscreteSpaces(Mesh1D.uniform(6), 2)
        field = piecewise_constant_expansion(1)
        sys = assemble_affine(spaces, field)
        for y in (0.1, 0.5, 1.0):
            direct = assemble_direct(spaces, field.at(np.array([y])))
            assert frob_rel(sys.matrix([y]), direct) < 1e-13

    def test_unit_parameters_reproduce_W(self):
        spaces = DiscreteSpaces(Mesh1D.uniform(5), 3)
        bcs = (BoundaryCondition.dirichlet(), BoundaryCondition("robin", 1.0))
        sys = assemble_affine(spaces, piecewise_constant_expansion(1), rho=1.0, bcs=bcs)
        assert frob_rel(sys.matrix([1.0]), sys.W) < 1e-14

    def test_benchmark_affinity_fifty_points(self, system, rng):
        field = piecewise_constant_expansion(10)
        for y in rng.uniform(0.1, 1.0, (50, 10)):
            direct = assemble_direct(system.spaces, field.at(y))
            assert frob_rel(system.matrix(y), direct) < 1e-12

    def test_matches_symmetric_oracle(self, system, rng):
        y = rng.uniform(0.1, 1.0, 10)
        ref = global_form(2, system.spaces.mesh.nodes, y, 0.0, 1.0)
        assert frob_rel(system.matrix(y), ref) < 1e-12

    def test_local_matrix_against_polynomial_oracle(self):
        spaces = DiscreteSpaces(Mesh1D(np.array([0.0, 0.3, 1.0])), 3)
        for e in range(2):
            A = element_matrix(spaces, e, ConstantField(0.7), 0.25, 2.0, 0.0, 0.4 * e)
            assert np.allclose(A, local_form(3, *spaces.element(e), 0.7, 0.25, 2.0, 0.0, 0.4 * e), atol=1e-12)

    def test_sparsity_follows_subdomains(self):
        E, Q, p = 20, 10, 2
        spaces = DiscreteSpaces(Mesh1D.uniform(E), p)
        sys = assemble_affine(spaces, piecewise_constant_expansion(Q))
        n = p + 1
        per = E // Q
        for q in range(1, Q + 1):
            elems = range((q - 1) * per, q * per)
            allowed = {e * n + i for e in elems for i in range(n)}
            # trace unknowns of the subdomain's faces; node 0 is Dirichlet and absent
            allowed |= {spaces.n_u + node - 1 for node in range((q - 1) * per, q * per + 1) if node > 0}
            rows, cols = sys.A[q].nonzero()
            assert set(rows) <= allowed and set(cols) <= allowed
            assert sys.A[q].nnz > 0

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError, match="tau"):
            assemble_affine(DiscreteSpaces(Mesh1D.uniform(2), 1), piecewise_constant_expansion(1), tau=0.0)

    def test_rejects_nonpositive_field(self):
        dom = ParameterDomain.uniform(2, -0.5, 1.0)
        with pytest.raises(ValueError, match="positive"):
            assemble_affine(DiscreteSpaces(Mesh1D.uniform(2), 1), piecewise_constant_expansion(2), domain=dom)

    def test_W_positive_definite_and_A_coercive(self, system, rng):
        assert np.linalg.eigvalsh(system.W.toarray()).min() > 0
        for _ in range(20):
            y = rng.uniform(0.1, 1.0, 10)
            v = rng.standard_normal(system.n)
            val = v @ (system.matrix(y) @ v)
            assert val > 0

    def test_affine_terms_psd(self, system):
        for Aq in system.A[1:]:
            M = Aq.toarray()
            M = 0.5 * (M + M.T)
            assert np.linalg.eigvalsh(M).min() > -1e-12 * np.abs(M).max()


class TestSolve:
    def test_constant_kappa_reproduces_exact_profile(self):
        spaces = DiscreteSpaces(Mesh1D(np.array([0.0, 0.13, 0.5, 0.77, 1.0])), 2)
        sys = assemble_affine(spaces, piecewise_constant_expansion(1))
        sol = solve_full(sys, [1.0])
        x = np.linspace(0.0, 1.0, 41)
        assert np.allclose(sol(x), x - x**2 / 2, atol=1e-14)

    def test_benchmark_interface_values(self, system, rng):
        for y in rng.uniform(0.1, 1.0, (5, 10)):
            sol = solve_full(system, y)
            for node in range(11):
                assert sol.uhat[node] == pytest.approx(analytic_solution_1d(y, node / 10), abs=1e-10)

    def test_condensed_equals_monolithic(self, system, rng):
        for y in rng.uniform(0.1, 1.0, (20, 10)):
            sol = solve_full(system, y)
            mono = solve_monolithic(system, y)
            assert np.max(np.abs(sol.vector - mono)) < 1e-11 * np.max(np.abs(mono))
            assert abs(evaluate_output(sol, system.ell) - system.ell @ mono) < 1e-11

    def test_outputs_match_analytic(self, system, rng):
        ys = rng.uniform(0.1, 1.0, (100, 10))
        assert np.max(np.abs(outputs_batch(system, ys) - analytic_output_1d(ys))) < 1e-10

    def test_output_trivial_values(self, system):
        assert evaluate_output(solve_full(system, np.ones(10)), system.ell) == pytest.approx(1 / 3, abs=1e-13)
        sys1 = assemble_affine(DiscreteSpaces(Mesh1D.uniform(3), 2), piecewise_constant_expansion(1))
        assert evaluate_output(solve_full(sys1, [1.0]), sys1.ell) == pytest.approx(1 / 3, abs=1e-14)

    @given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=6), st.integers(2, 4), st.floats(0.2, 5.0))
    @settings(max_examples=25, deadline=None)
    def test_p_exactness_any_mesh(self, widths, p, kappa):
        nodes = np.concatenate([[0.0], np.cumsum(widths) / np.sum(widths)])
        nodes[-1] = 1.0
        spaces = DiscreteSpaces(Mesh1D(nodes), p)
        field = RandomFieldExpansion(ConstantField(0.0), [ConstantField(1.0)])
        sys = assemble_affine(spaces, field)
        s = outputs_batch(sys, np.array([[kappa]]))[0]
        assert s == pytest.approx(1 / (3 * kappa), rel=1e-13)

    def test_batch_matches_single(self, system, rng):
        ys = rng.uniform(0.1, 1.0, (7, 10))
        u, t = solve_batch(system, ys, chunk=3)
        for k, y in enumerate(ys):
            sol = solve_full(system, y)
            assert np.allclose(u[k], sol.u, rtol=0, atol=1e-14)

    def test_singular_trace_system_reported(self):
        bcs = (BoundaryCondition.neumann(), BoundaryCondition.neumann())
        sys = assemble_affine(DiscreteSpaces(Mesh1D.uniform(4), 2), piecewise_constant_expansion(1), bcs=bcs)
        with pytest.raises(NonsolvableParameter):
            solve_full(sys, [1.0])


class TestLift:
    def test_linear_function_has_unit_gradient(self):
        spaces = DiscreteSpaces(Mesh1D.uniform(3), 2)
        for e in range(3):
            a, b = spaces.element(e)
            # x on [a, b] in Legendre coefficients: midpoint + half-width * P_1
            u = np.array([(a + b) / 2, (b - a) / 2, 0.0])
            q = lift(spaces, e, u, np.array([a, b]))
            assert np.allclose(q, [1.0, 0.0, 0.0], atol=1e-13)

    def test_zero(self):
        spaces = DiscreteSpaces(Mesh1D.uniform(2), 3)
        assert np.all(lift(spaces, 1, np.zeros(4), np.zeros(2)) == 0)

    def test_random_lift_satisfies_weak_gradient_identity(self, rng):
        spaces = DiscreteSpaces(Mesh1D(np.array([0.0, 0.35, 1.0])), 3)
        for e in range(2):
            a, b = spaces.element(e)
            u, uh = rng.standard_normal(4), rng.standard_normal(2)
            q = Legendre(lift(spaces, e, u, uh), domain=[a, b])
            uu = Legendre(u, domain=[a, b])
            for i in range(4):
                r = Legendre.basis(i, domain=[a, b])
                # (q, r) + (u, r') - <û, r n> = 0
                lhs = (q * r).integ()
                lhs = lhs(b) - lhs(a)
                mid = (uu * r.deriv()).integ()
                lhs += mid(b) - mid(a)
                lhs -= uh[1] * r(b) - uh[0] * r(a)
                assert abs(lhs) < 1e-13

    def test_solution_gradient_is_flux(self, system):
        y = np.linspace(0.2, 1.0, 10)
        sol = solve_full(system, y)
        # κ u' = 1 - x exactly, so q = (1 - x) / κ on each cell
        for e in range(10):
            a, b = system.spaces.element(e)
            xq = np.linspace(a, b, 5)
            q = Legendre(sol.q(e), domain=[a, b])(xq)
            assert np.allclose(q, (1 - xq) / y[e], atol=1e-11)


class TestHelmholtz:
    @staticmethod
    def solution(E, p, k=6.0):
        spaces = DiscreteSpaces(Mesh1D.uniform(E), p)
        bcs = (BoundaryCondition.dirichlet(), BoundaryCondition("robin", -1j * k))
        sys = assemble_affine(spaces, piecewise_constant_expansion(1), rho=-k * k, bcs=bcs)
        assert sys.is_complex
        return solve_full(sys, [1.0])

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_h_convergence_rate(self, p):
        ref = self.solution(512, p + 1)
        xg, wg = np.polynomial.legendre.leggauss(12)
        errs = []
        Es = [16, 32, 64]
        for E in Es:
            sol = self.solution(E, p)
            err2 = 0.0
            for e in range(E):
                a, b = e / E, (e + 1) / E
                x = a + 0.5 * (xg + 1) * (b - a)
                err2 += 0.5 * (b - a) * np.sum(wg * np.abs(sol(x) - ref(x)) ** 2)
            errs.append(np.sqrt(err2))
        rate = np.log(errs[-2] / errs[-1]) / np.log(2)
        assert abs(rate - (p + 1)) < 0.3

    def test_complex_path_matches_monolithic(self):
        k = 4.0
        spaces = DiscreteSpaces(Mesh1D.uniform(10), 2)
        bcs = (BoundaryCondition.dirichlet(), BoundaryCondition("robin", -1j * k))
        sys = assemble_affine(spaces, piecewise_constant_expansion(2), rho=-k * k, bcs=bcs, output_real=True)
        y = np.array([0.7, 1.3])
        assert np.allclose(solve_full(sys, y).vector, solve_monolithic(sys, y), atol=1e-11)
        s = outputs_batch(sys, y[None, :])
        assert not np.iscomplexobj(s)


def test_triplet_round_trip(system, tmp_path):
    path = tmp_path / "A1.txt"
    dump_triplets(system.A[1], path)
    assert open(path).readline().startswith("# mvrhdg sparse triplets")
    back = load_triplets(path)
    assert (back != system.A[1]).nnz == 0
    dump_triplets(system.b, tmp_path / "b.txt")
    assert np.array_equal(load_triplets(tmp_path / "b.txt").toarray()[:, 0], system.b)

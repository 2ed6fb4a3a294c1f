"""One-dimensional HDG discretisation of -(κ u')' + ϱ u = f.

The unknowns are the element-wise polynomial ``u`` and the single-valued
trace ``û`` at mesh nodes; the gradient ``q`` is eliminated through the two
lifting operators, which makes the bilinear form affine in (κ, ϱ, ν).
Global vectors use the ordering ``[u (element-major), û (free nodes)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse.linalg
import scipy.sparse as sp
from numpy.polynomial import legendre

from .stochastic import ConstantField, ParameterDomain, RandomFieldExpansion


SINGULAR_COND = 1e12


class NonsolvableParameter(ArithmeticError):
    """The trace system is singular at the requested parameter point."""


@dataclass(frozen=True)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("mesh needs at least two nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        if x[0] != 0.0 or x[-1] != 1.0:
            raise ValueError("mesh must span [0, 1]")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @classmethod
    def uniform(cls, n_elements: int) -> "Mesh1D":
        return cls(np.linspace(0.0, 1.0, n_elements + 1))

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)


@dataclass(frozen=True)
class BoundaryCondition:
    """``dirichlet`` (homogeneous) or ``robin``: κ u' n + ν u = g. Neumann is robin with ν = 0."""

    kind: str = "robin"
    nu: complex = 0.0
    g: complex = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "robin"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "dirichlet" and self.g != 0:
            raise ValueError("only homogeneous Dirichlet data is supported")

    @classmethod
    def dirichlet(cls) -> "BoundaryCondition":
        return cls("dirichlet")

    @classmethod
    def neumann(cls, g: complex = 0.0) -> "BoundaryCondition":
        return cls("robin", 0.0, g)


class DiscreteSpaces:
    """Degree-p Legendre bases on each element plus nodal traces."""

    def __init__(self, mesh: Mesh1D, p: int, n_quad: int | None = None):
        if p < 0:
            raise ValueError("polynomial degree must be >= 0")
        self.mesh = mesh
        self.p = p
        self.n_quad = n_quad or p + 2
        self.xi, self.wq = legendre.leggauss(self.n_quad)
        eye = np.eye(p + 1)
        # rows: basis index, columns: quadrature point
        self.P = np.array([legendre.legval(self.xi, eye[i]) for i in range(p + 1)])
        self.dP = np.array([legendre.legval(self.xi, legendre.legder(eye[i])) for i in range(p + 1)])
        self.P_ends = np.array([[legendre.legval(-1.0, eye[i]), legendre.legval(1.0, eye[i])] for i in range(p + 1)])

    @property
    def n_local(self) -> int:
        return self.p + 1

    @property
    def n_u(self) -> int:
        return self.mesh.n_elements * self.n_local

    def element(self, e: int) -> tuple[float, float]:
        return self.mesh.nodes[e], self.mesh.nodes[e + 1]

    def quad_points(self, e: int) -> np.ndarray:
        a, b = self.element(e)
        return a + 0.5 * (self.xi + 1.0) * (b - a)

    def mass(self, e: int, weight=None) -> np.ndarray:
        a, b = self.element(e)
        w = self.wq if weight is None else self.wq * weight
        return 0.5 * (b - a) * (self.P * w) @ self.P.T

    def lifting_matrices(self, e: int) -> tuple[np.ndarray, np.ndarray]:
        """Matrices (Lu, Lt) with q = Lu @ u + Lt @ [û_left, û_right] on element e."""
        M = self.mass(e)
        C = (self.dP * self.wq) @ self.P.T  # C[i, j] = ∫ φ_j φ_i'
        E = np.column_stack([-self.P_ends[:, 0], self.P_ends[:, 1]])
        return -np.linalg.solve(M, C), np.linalg.solve(M, E)

    def evaluate(self, coeffs: np.ndarray, e: int, x) -> np.ndarray:
        a, b = self.element(e)
        xi = 2.0 * (np.asarray(x, dtype=float) - a) / (b - a) - 1.0
        return legendre.legval(xi, coeffs)


def lift(spaces: DiscreteSpaces, e: int, u_local, uhat_local) -> np.ndarray:
    """Gradient coefficients q = l(u) + m(û) on element e."""
    Lu, Lt = spaces.lifting_matrices(e)
    return Lu @ np.asarray(u_local) + Lt @ np.asarray(uhat_local)


def element_matrix(spaces: DiscreteSpaces, e: int, kappa, rho, tau: float,
                   nu_left=0.0, nu_right=0.0) -> np.ndarray:
    """Local matrix of a_h on element e, ordered [u_0..u_p, û_left, û_right].

    Entry (i, j) is a_h(trial j, test i). ``kappa`` needs ``element_values``;
    ``rho`` is a scalar. ``nu_*`` are Robin terms on domain-boundary faces.
    """
    a, b = spaces.element(e)
    n = spaces.n_local
    P, dP, wq, Pe = spaces.P, spaces.dP, spaces.wq, spaces.P_ends
    kq = kappa.element_values(a, b, spaces.quad_points(e))
    k_end = kappa.element_values(a, b, np.array([a, b]))
    normal = np.array([-1.0, 1.0])
    Lu, Lt = spaces.lifting_matrices(e)
    scalar = np.result_type(np.asarray(kq), np.asarray(rho), np.asarray(nu_left), np.asarray(nu_right))

    Kqw = (dP * (wq * kq)) @ P.T  # (κ φ_k, φ_i')
    Bq = (Pe * (k_end * normal)) @ Pe.T  # <κ φ_k n, φ_i>
    Tuu = (Pe * (k_end * tau)) @ Pe.T
    Tut = -Pe * (k_end * tau)
    Bmu = (Pe * (k_end * normal)).T  # row e: κ_e n_e φ_k(e)

    A = np.zeros((n + 2, n + 2), dtype=scalar)
    G = Kqw - Bq
    A[:n, :n] = G @ Lu + Tuu + rho * spaces.mass(e)
    A[:n, n:] = G @ Lt + Tut
    A[n:, :n] = Bmu @ Lu - (Pe * (k_end * tau)).T
    A[n:, n:] = Bmu @ Lt + np.diag(k_end * tau)
    A[n, n] += nu_left
    A[n + 1, n + 1] += nu_right
    return A


@dataclass
class AffineSystem:
    """A(y) = Σ_q θ_q(y) A_q with θ = (1, y_1, ..., y_Q), plus b, ℓ and the W Gram matrix."""

    spaces: DiscreteSpaces
    A: list  # sparse (n, n) per affine term
    b: np.ndarray
    ell: np.ndarray
    W: sp.csr_matrix
    elem: np.ndarray  # (Q+1, E, m, m) local matrices
    elem_rhs: np.ndarray  # (E, m)
    free_nodes: np.ndarray
    tau: float = 1.0
    output_real: bool = False
    compliant: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def Q(self) -> int:
        return len(self.A) - 1

    @property
    def n(self) -> int:
        return self.b.size

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.elem) or np.iscomplexobj(self.b)

    def theta(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.Q:
            raise ValueError(f"expected {self.Q} parameters")
        return np.concatenate([np.ones(y.shape[:-1] + (1,)), y], axis=-1)

    def matrix(self, y) -> sp.csr_matrix:
        th = self.theta(y)
        out = self.A[0] * th[0]
        for t, Aq in zip(th[1:], self.A[1:]):
            out = out + t * Aq
        return out.tocsr()

    @cached_property
    def W_factor(self):
        return sp.linalg.splu(self.W.tocsc())

    def riesz(self, r: np.ndarray) -> np.ndarray:
        """Solve W e = r (columns of r allowed); W is real, so complex r is split."""
        r = np.asarray(r)
        if np.iscomplexobj(r):
            return self.W_factor.solve(np.ascontiguousarray(r.real)) + 1j * self.W_factor.solve(np.ascontiguousarray(r.imag))
        return self.W_factor.solve(np.asarray(r, dtype=float))


def _global_index(spaces: DiscreteSpaces, free_nodes: np.ndarray) -> np.ndarray:
    """(E, m) map from local dofs to global free-dof indices (-1 for constrained traces)."""
    E, n = spaces.mesh.n_elements, spaces.n_local
    node_pos = -np.ones(E + 1, dtype=int)
    node_pos[free_nodes] = spaces.n_u + np.arange(free_nodes.size)
    idx = np.empty((E, n + 2), dtype=int)
    idx[:, :n] = np.arange(E * n).reshape(E, n)
    idx[:, n] = node_pos[:-1]
    idx[:, n + 1] = node_pos[1:]
    return idx


def _scatter(elem: np.ndarray, idx: np.ndarray, size: int) -> sp.csr_matrix:
    E, m, _ = elem.shape
    rows = np.repeat(idx[:, :, None], m, axis=2)
    cols = np.repeat(idx[:, None, :], m, axis=1)
    keep = (rows >= 0) & (cols >= 0)
    return sp.coo_matrix((elem[keep], (rows[keep], cols[keep])), shape=(size, size)).tocsr()


def _scatter_vec(vals: np.ndarray, idx: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size, dtype=vals.dtype)
    keep = idx >= 0
    np.add.at(out, idx[keep], vals[keep])
    return out


def _boundary_nu(bcs):
    left, right = bcs
    nu_l = left.nu if left.kind == "robin" else 0.0
    nu_r = right.nu if right.kind == "robin" else 0.0
    return nu_l, nu_r


def _element_stack(spaces, kappa, rho, tau, bcs) -> np.ndarray:
    E = spaces.mesh.n_elements
    nu_l, nu_r = _boundary_nu(bcs)
    mats = [
        element_matrix(spaces, e, kappa, rho, tau,
                       nu_left=nu_l if e == 0 else 0.0,
                       nu_right=nu_r if e == E - 1 else 0.0)
        for e in range(E)
    ]
    return np.array(mats)


def _free_nodes(spaces, bcs) -> np.ndarray:
    E = spaces.mesh.n_elements
    free = np.ones(E + 1, dtype=bool)
    if bcs[0].kind == "dirichlet":
        free[0] = False
    if bcs[1].kind == "dirichlet":
        free[E] = False
    return np.flatnonzero(free)


def _functional(spaces: DiscreteSpaces, func, boundary: Sequence[complex] = (0.0, 0.0), bcs=None) -> np.ndarray:
    """Local vectors (E, m): (func, φ_i)_T and <g, μ> on Robin faces."""
    E, n = spaces.mesh.n_elements, spaces.n_local
    vals = [np.asarray(func.element_values(*spaces.element(e), spaces.quad_points(e))) for e in range(E)]
    dtype = np.result_type(*vals, np.asarray(boundary[0]), np.asarray(boundary[1]), float)
    out = np.zeros((E, n + 2), dtype=dtype)
    for e in range(E):
        a, b = spaces.element(e)
        out[e, :n] = 0.5 * (b - a) * (spaces.P * spaces.wq) @ vals[e]
    if bcs is None or bcs[0].kind == "robin":
        out[0, n] += boundary[0]
    if bcs is None or bcs[1].kind == "robin":
        out[E - 1, n + 1] += boundary[1]
    return out


def _as_field(value):
    if hasattr(value, "element_values"):
        return value
    if callable(value):
        from .stochastic import FunctionField
        return FunctionField(value)
    return ConstantField(value)


def assemble_direct(spaces: DiscreteSpaces, kappa, rho=0.0, bcs=None, tau: float = 1.0) -> sp.csr_matrix:
    """Assemble a_h(·,·;(κ, ϱ, ν)) for one concrete coefficient field, without affine splitting."""
    bcs = bcs or (BoundaryCondition.dirichlet(), BoundaryCondition.neumann())
    free = _free_nodes(spaces, bcs)
    idx = _global_index(spaces, free)
    elem = _element_stack(spaces, _as_field(kappa), rho, tau, bcs)
    return _scatter(elem, idx, spaces.n_u + free.size)


def assemble_affine(spaces: DiscreteSpaces, field: RandomFieldExpansion, rho=0.0,
                    bcs=None, source=1.0, tau: float = 1.0,
                    output_weight=1.0, domain: ParameterDomain | None = None,
                    output_real: bool = False, compliant: bool = False) -> AffineSystem:
    """Affine decomposition of the HDG operator for κ = κ̄ + Σ ψ_q y_q.

    Term 0 carries (κ̄, ϱ, ν); term q carries (ψ_q, 0, 0). W is a_h with
    (κ, ϱ, ν) = (1, 1, 1). When ``domain`` is given, κ is checked to stay
    strictly positive over the whole parameter box.
    """
    if tau <= 0:
        raise ValueError("stabilisation tau must be positive")
    bcs = bcs or (BoundaryCondition.dirichlet(), BoundaryCondition.neumann())
    if domain is not None:
        if domain.Q != field.Q:
            raise ValueError("parameter domain and field expansion disagree on Q")
        check_positivity(spaces, field, domain)
    free = _free_nodes(spaces, bcs)
    idx = _global_index(spaces, free)
    size = spaces.n_u + free.size

    zero_bc = tuple(BoundaryCondition(bc.kind, 0.0, 0.0) for bc in bcs)
    stacks = [_element_stack(spaces, field.mean, rho, tau, bcs)]
    stacks += [_element_stack(spaces, mode, 0.0, tau, zero_bc) for mode in field.modes]
    dtype = np.result_type(*stacks)
    elem = np.array(stacks, dtype=dtype)
    A = [_scatter(s, idx, size) for s in elem]

    unit_bc = tuple(BoundaryCondition(bc.kind, 1.0, 0.0) for bc in bcs)
    W = _scatter(_element_stack(spaces, ConstantField(1.0), 1.0, tau, unit_bc), idx, size)

    elem_rhs = _functional(spaces, _as_field(source), (bcs[0].g, bcs[1].g), bcs)
    b = _scatter_vec(elem_rhs, idx, size)
    ell_loc = _functional(spaces, _as_field(output_weight))
    ell_loc[:, spaces.n_local:] = 0.0
    ell = _scatter_vec(ell_loc, idx, size)
    if compliant and (np.iscomplexobj(elem) or not np.allclose(b, ell, rtol=0, atol=1e-14 * np.abs(b).max())):
        raise ValueError("compliant flag requires a real system with output functional equal to the source functional")
    return AffineSystem(spaces, A, b, ell, W, elem, elem_rhs, free, tau, output_real, compliant)


def check_positivity(spaces: DiscreteSpaces, field: RandomFieldExpansion, domain: ParameterDomain) -> tuple[float, float]:
    """Return (α1, α2) bounds of κ over quadrature points and element ends; raise if α1 <= 0."""
    lo, hi = np.inf, -np.inf
    for e in range(spaces.mesh.n_elements):
        a, b = spaces.element(e)
        x = np.concatenate([[a], spaces.quad_points(e), [b]])
        kl, kh = field.bounds_on_element(a, b, x, domain)
        lo, hi = min(lo, kl.min()), max(hi, kh.max())
    if lo <= 0:
        raise ValueError(f"diffusivity is not strictly positive over the parameter box (min {lo:g})")
    return lo, hi


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

@dataclass
class FieldSolution:
    spaces: DiscreteSpaces
    u: np.ndarray  # (E, p+1)
    uhat: np.ndarray  # (E+1,) nodal traces, zero at Dirichlet nodes
    free_nodes: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.uhat[self.free_nodes]])

    def q(self, e: int) -> np.ndarray:
        return lift(self.spaces, e, self.u[e], self.uhat[e:e + 2])

    def __call__(self, x) -> np.ndarray:
        """Evaluate u_h at points x (element interior convention at nodes: left element wins)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes = self.spaces.mesh.nodes
        e = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
        return np.array([self.spaces.evaluate(self.u[k], k, xi) for k, xi in zip(e, x)])


def _thomas(lower, diag, upper, rhs):
    """Batched tridiagonal solve; arrays have shape (S, n) (lower[:, 0], upper[:, -1] unused)."""
    S, n = diag.shape
    c = np.zeros_like(diag)
    d = np.zeros_like(rhs)
    piv = np.empty_like(diag)
    piv[:, 0] = diag[:, 0]
    c[:, 0] = upper[:, 0] / piv[:, 0]
    d[:, 0] = rhs[:, 0] / piv[:, 0]
    for i in range(1, n):
        piv[:, i] = diag[:, i] - lower[:, i] * c[:, i - 1]
        c[:, i] = upper[:, i] / piv[:, i] if i < n - 1 else 0.0
        d[:, i] = (rhs[:, i] - lower[:, i] * d[:, i - 1]) / piv[:, i]
    x = np.empty_like(d)
    x[:, -1] = d[:, -1]
    for i in range(n - 2, -1, -1):
        x[:, i] = d[:, i] - c[:, i] * x[:, i + 1]
    return x, piv


def solve_batch(sys: AffineSystem, ys: np.ndarray, chunk: int = 2048):
    """Static-condensation solve for many parameter points.

    Returns ``(u, uhat)`` with shapes (S, E, p+1) and (S, E+1).
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    S = ys.shape[0]
    E, n = sys.spaces.mesh.n_elements, sys.spaces.n_local
    dtype = np.result_type(sys.elem, sys.elem_rhs)
    u_all = np.empty((S, E, n), dtype=dtype)
    t_all = np.zeros((S, E + 1), dtype=dtype)
    free = sys.free_nodes
    for s0 in range(0, S, chunk):
        th = sys.theta(ys[s0:s0 + chunk])
        K = np.einsum("sq,qeij->seij", th, sys.elem)
        f = np.broadcast_to(sys.elem_rhs, K.shape[:2] + (n + 2,))
        rhs = np.concatenate([K[..., :n, n:], f[..., :n, None]], axis=-1)
        X = np.linalg.solve(K[..., :n, :n], rhs)
        Xt, xf = X[..., :2], X[..., 2]
        Ktu = K[..., n:, :n]
        Sch = K[..., n:, n:] - Ktu @ Xt
        g = f[..., n:] - np.einsum("seij,sej->sei", Ktu, xf)

        B = th.shape[0]
        diag = np.zeros((B, E + 1), dtype=dtype)
        lower = np.zeros_like(diag)
        upper = np.zeros_like(diag)
        r = np.zeros_like(diag)
        diag[:, :-1] += Sch[:, :, 0, 0]
        diag[:, 1:] += Sch[:, :, 1, 1]
        upper[:, :-1] = Sch[:, :, 0, 1]
        lower[:, 1:] = Sch[:, :, 1, 0]
        r[:, :-1] += g[:, :, 0]
        r[:, 1:] += g[:, :, 1]
        # restrict to free nodes; constrained traces are zero so no lifting is needed
        lo_f, di_f, up_f, r_f = lower[:, free], diag[:, free], upper[:, free], r[:, free]
        if free.size and np.any(np.diff(free) != 1):
            raise ValueError("free trace nodes must be contiguous")
        lo_f[:, 0] = 0.0
        up_f[:, -1] = 0.0
        that, piv = _thomas(lo_f, di_f, up_f, r_f)
        scale = np.abs(di_f).max(axis=1)
        bad = np.flatnonzero(~np.all(np.abs(piv) > 1e-13 * scale[:, None], axis=1) | ~np.all(np.isfinite(that), axis=1))
        for k in bad:
            # tiny Thomas pivot: retry with a pivoted dense solve unless the trace matrix is numerically singular
            T = np.diag(di_f[k]) + np.diag(up_f[k, :-1], 1) + np.diag(lo_f[k, 1:], -1)
            if not np.all(np.isfinite(T)) or np.linalg.cond(T) > SINGULAR_COND:
                raise NonsolvableParameter(f"singular trace system at y = {ys[s0 + k]}")
            that[k] = np.linalg.solve(T, r_f[k])
        tr = np.zeros((B, E + 1), dtype=dtype)
        tr[:, free] = that
        loc = np.stack([tr[:, :-1], tr[:, 1:]], axis=-1)
        u_all[s0:s0 + B] = xf - np.einsum("seij,sej->sei", Xt, loc)
        t_all[s0:s0 + B] = tr
    return u_all, t_all


def solve_full(sys: AffineSystem, y) -> FieldSolution:
    """HDG solution at one parameter point via element-wise condensation and a trace solve."""
    u, t = solve_batch(sys, np.asarray(y, dtype=float)[None, :])
    return FieldSolution(sys.spaces, u[0], t[0], sys.free_nodes)


def solve_monolithic(sys: AffineSystem, y) -> np.ndarray:
    """Reference solve of the full (u, û) system; returns the global free-dof vector."""
    x = sp.linalg.spsolve(sys.matrix(y).tocsc(), sys.b)
    return np.asarray(x)


def evaluate_output(sol, ell: np.ndarray, real: bool = False):
    vec = sol.vector if isinstance(sol, FieldSolution) else np.asarray(sol)
    s = ell @ vec
    return s.real if real else s


def outputs_batch(sys: AffineSystem, ys: np.ndarray) -> np.ndarray:
    """s_h(y) for every row of ``ys``."""
    u, t = solve_batch(sys, ys)
    S = u.shape[0]
    vec = np.concatenate([u.reshape(S, -1), t[:, sys.free_nodes]], axis=1)
    s = vec @ sys.ell
    return s.real if sys.output_real or not np.iscomplexobj(s) else s


def dump_triplets(mat, path) -> None:
    """Write a sparse matrix (or vector as a column) as 'row col real imag' lines."""
    m = sp.coo_matrix(np.atleast_2d(mat).T if np.ndim(mat) == 1 else mat)
    with open(path, "w") as fh:
        fh.write("# mvrhdg sparse triplets v1\n")
        fh.write(f"{m.shape[0]} {m.shape[1]} {m.nnz}\n")
        for i, j, v in zip(m.row, m.col, m.data):
            v = complex(v)
            fh.write(f"{i} {j} {v.real:.17g} {v.imag:.17g}\n")


def load_triplets(path) -> sp.csr_matrix:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    nr, nc, nnz = (int(t) for t in lines[0].split())
    data = np.loadtxt(lines[1:], ndmin=2) if nnz else np.zeros((0, 4))
    vals = data[:, 2] + 1j * data[:, 3]
    if not np.any(data[:, 3]):
        vals = vals.real
    return sp.coo_matrix((vals, (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(nr, nc)).tocsr()

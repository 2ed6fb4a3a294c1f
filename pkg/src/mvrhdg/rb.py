"""Certified primal-dual reduced basis on top of an :class:`~mvrhdg.hdg.AffineSystem`.

Offline: greedy snapshot selection, W-orthonormal bases, reduced affine blocks
and Gram matrices of residual Riesz representers. Online: O(QN^2 + N^3)
outputs, residual dual norms and output bounds for any N <= N_max.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .hdg import AffineSystem, solve_full

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
DROP_TOL = 1e-10
OUTPUT_FP = 1e3 * EPS  # relative output round-off of the full solve (condition-number scale)


class ReducedSolveError(ArithmeticError):
    pass


@dataclass
class Stability:
    """Lower bound β̃(y) for the inf-sup constant.

    ``kind`` is ``"min-theta"`` (β̃ = min_q θ_q(y)/θ_q(ȳ) · β_h(ȳ) over the active
    affine terms), ``"constant"`` (user value) or ``"unavailable"``.
    """

    kind: str
    beta: float = 0.0
    y_ref: np.ndarray | None = None
    active: np.ndarray | None = None  # which θ_q enter the min

    def __call__(self, y) -> np.ndarray | None:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.kind == "unavailable":
            return None
        if self.kind == "constant":
            return np.full(y.shape[0], self.beta)
        th = np.concatenate([np.ones((y.shape[0], 1)), y], axis=1)[:, self.active]
        th_ref = np.concatenate([[1.0], self.y_ref])[self.active]
        if np.any(th <= 0):
            raise ValueError("min-theta bound needs positive affine coefficients")
        return np.min(th / th_ref, axis=1) * self.beta


def _is_psd(M: np.ndarray, tol: float = 1e-10) -> bool:
    Ms = 0.5 * (M + M.conj().T)
    scale = max(np.abs(Ms).max(), 1e-300)
    return bool(np.linalg.eigvalsh(Ms).min() >= -tol * scale)


def coercivity_constant(sys: AffineSystem, y) -> float:
    """Smallest generalised eigenvalue of (sym A(y), W); equals β_h(y) for a symmetric coercive form."""
    A = sys.matrix(y).toarray()
    A = 0.5 * (A + A.conj().T)
    return float(scipy.linalg.eigh(A, sys.W.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])


def inf_sup_constant(sys: AffineSystem, y) -> float:
    """β_h(y) = min singular value of W^{-1/2} A(y) W^{-1/2} (dense; for checks)."""
    Lc = np.linalg.cholesky(sys.W.toarray())
    A = sys.matrix(y).toarray()
    X = scipy.linalg.solve_triangular(Lc, A, lower=True)
    X = scipy.linalg.solve_triangular(Lc, X.conj().T, lower=True).conj().T
    return float(np.linalg.svd(X, compute_uv=False).min())


def min_theta_stability(sys: AffineSystem, y_ref=None) -> Stability:
    """Bound conditioner for parametrically coercive systems, or ``unavailable``."""
    if sys.is_complex:
        return Stability("unavailable")
    active = np.array([sp.linalg.norm(Aq) > 0 for Aq in sys.A])
    if not all(_is_psd(Aq.toarray()) for Aq, on in zip(sys.A, active) if on):
        return Stability("unavailable")
    y_ref = np.ones(sys.Q) if y_ref is None else np.asarray(y_ref, dtype=float)
    beta = coercivity_constant(sys, y_ref)
    if beta <= 0:
        return Stability("unavailable")
    return Stability("min-theta", beta, y_ref, active)


@dataclass
class OutputBound:
    s_N: np.ndarray
    delta_pr: np.ndarray
    delta_du: np.ndarray
    delta_s: np.ndarray
    beta: np.ndarray


@dataclass
class RBModel:
    """Parameter-independent reduced data; immutable after the offline stage."""

    Q: int
    N_max: int
    compliant: bool
    A_pr: np.ndarray  # (Q+1, N, N): Z^H A_q Z
    b_pr: np.ndarray  # Z^H b
    l_pr: np.ndarray  # ℓ^T Z
    G_pr: np.ndarray  # Riesz Gram of [b, A_q ζ_n]
    stability: Stability
    A_du: np.ndarray | None = None  # Zd^H A_q^H Zd
    l_du: np.ndarray | None = None  # Zd^H conj(ℓ)
    A_cross: np.ndarray | None = None  # Zd^H A_q Z
    b_du: np.ndarray | None = None  # Zd^H b
    G_du: np.ndarray | None = None
    R_pr: np.ndarray | None = None  # triangular factor with G_pr = R^H R
    R_du: np.ndarray | None = None
    output_real: bool = False
    snapshots: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    Z: np.ndarray | None = None
    Zd: np.ndarray | None = None
    clamp_count: int = 0

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.A_pr)

    def _check_N(self, N: int):
        if not 1 <= N <= self.N_max:
            raise ValueError(f"N must lie in [1, {self.N_max}], got {N}")

    def theta(self, ys) -> np.ndarray:
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        return np.concatenate([np.ones((ys.shape[0], 1)), ys], axis=1)

    def _gram_index(self, N: int) -> np.ndarray:
        return np.concatenate([[0], 1 + (np.arange(self.Q + 1)[:, None] * self.N_max + np.arange(N)).ravel()])

    # -- online solves ---------------------------------------------------

    def solve(self, N: int, ys) -> np.ndarray:
        """Primal reduced coefficients, shape (S, N)."""
        self._check_N(N)
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        th = self.theta(ys)
        A = (th @ self.A_pr[:, :N, :N].reshape(self.Q + 1, -1)).reshape(-1, N, N)
        return _batched_solve(A, self.b_pr[:N], ys, N)

    def solve_dual(self, N: int, ys) -> np.ndarray:
        if self.compliant:
            return -self.solve(N, ys)
        self._check_N(N)
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        th = self.theta(ys)
        A = (th @ self.A_du[:, :N, :N].reshape(self.Q + 1, -1)).reshape(-1, N, N)
        return _batched_solve(A, -self.l_du[:N], ys, N)

    def outputs(self, N: int, ys, c=None, cd=None) -> np.ndarray:
        """Primal-dual corrected outputs s_N(y) for every row of ``ys``."""
        c = self.solve(N, ys) if c is None else c
        s = c @ self.l_pr[:N]
        if not self.compliant:
            cd = self.solve_dual(N, ys) if cd is None else cd
            th = self.theta(ys)
            Ac = (th @ self.A_cross[:, :N, :N].reshape(self.Q + 1, -1)).reshape(-1, N, N)
            corr = np.sum(cd.conj() * (Ac @ c[..., None])[..., 0], axis=1) - cd.conj() @ self.b_du[:N]
            s = s + corr
        return s.real if self.output_real or not np.iscomplexobj(s) else s

    def _blocks(self, N: int) -> tuple:
        """Contiguous flattened affine blocks for size N, cached for the per-sample path."""
        cache = self.__dict__.setdefault("_block_cache", {})
        if N not in cache:
            flat = lambda A: np.ascontiguousarray(A[:, :N, :N].reshape(self.Q + 1, N * N))
            du = None if self.compliant else (flat(self.A_du), flat(self.A_cross), -self.l_du[:N].copy(), self.b_du[:N].copy())
            cache[N] = (flat(self.A_pr), self.b_pr[:N].copy(), self.l_pr[:N].copy(), du)
        return cache[N]

    def output_single(self, N: int, y) -> complex | float:
        """s_N at one parameter point without the batch machinery (the per-sample online cost)."""
        self._check_N(N)
        th = np.concatenate(([1.0], y))
        A, b, l, du = self._blocks(N)
        c = np.linalg.solve((th @ A).reshape(N, N), b)
        s = l @ c
        if du is not None:
            Ad, Ac, ld, bd = du
            cd = np.linalg.solve((th @ Ad).reshape(N, N), ld)
            s = s + cd.conj() @ ((th @ Ac).reshape(N, N) @ c - bd)
        return s.real if self.output_real or not np.iscomplexobj(s) else s

    # -- residual norms --------------------------------------------------

    def _residual_sq(self, N: int, ys, coeffs, G, R=None) -> tuple[np.ndarray, np.ndarray]:
        th = self.theta(ys)
        chi = np.concatenate([np.ones((th.shape[0], 1)), -(th[:, :, None] * coeffs[:, None, :]).reshape(th.shape[0], -1)], axis=1)
        idx = self._gram_index(N)
        Gs = G[np.ix_(idx, idx)]
        if R is not None:
            # ‖R χ‖² avoids the cancellation of χ^H G χ once the residual reaches round-off
            val = np.sum(np.abs(chi @ R[:, idx].T) ** 2, axis=1)
        else:
            val = np.sum((chi.conj() @ Gs) * chi, axis=1).real
        # forward error allowance of the expansion (sum of |terms|)
        allowance = 4 * idx.size * EPS * np.sum((np.abs(chi) @ np.abs(Gs)) * np.abs(chi), axis=1)
        return val, allowance

    def residual_norms(self, N: int, ys, which: str = "primal", coeffs=None, with_allowance: bool = False):
        """Dual norm ‖r(·; y)‖_{W'} via the offline-online expansion."""
        if which == "primal":
            coeffs = self.solve(N, ys) if coeffs is None else coeffs
            G, R = self.G_pr, self.R_pr
        elif which == "dual":
            if self.compliant:
                return self.residual_norms(N, ys, "primal", None if coeffs is None else -coeffs, with_allowance)
            coeffs = self.solve_dual(N, ys) if coeffs is None else coeffs
            G, R = self.G_du, self.R_du
        else:
            raise ValueError("which must be 'primal' or 'dual'")
        # dual residual is -(conj(ℓ) + Σ θ_q A_q^H Zd c_d): flip the sign of the coefficients
        val, allowance = self._residual_sq(N, ys, coeffs if which == "primal" else -coeffs, G, R)
        neg = val < 0
        if np.any(neg):
            self.clamp_count += int(neg.sum())
        val = np.maximum(val, 0.0)
        if with_allowance:
            return np.sqrt(val), np.sqrt(val + allowance)
        return np.sqrt(val)

    def output_bound(self, N: int, ys) -> OutputBound:
        """s_N with Δ^pr, Δ^du and Δ^s = β̃ Δ^pr Δ^du.

        Δ values include the floating-point allowance of the residual expansion
        and a relative output floor, so they remain upper bounds when the true
        residual is at round-off level.
        """
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        beta = self.stability(ys)
        if beta is None:
            raise ValueError("no stability lower bound available for this model")
        c = self.solve(N, ys)
        cd = None if self.compliant else self.solve_dual(N, ys)
        s = self.outputs(N, ys, c, cd)
        _, rp = self.residual_norms(N, ys, "primal", c, with_allowance=True)
        if self.compliant:
            rd = rp
        else:
            _, rd = self.residual_norms(N, ys, "dual", cd, with_allowance=True)
        # floor for comparing against a floating-point full solve: raises Δ^s by at least OUTPUT_FP·|s_N|
        floor = OUTPUT_FP * beta * np.abs(s)
        rp, rd = np.sqrt(rp**2 + floor), np.sqrt(rd**2 + floor)
        d_pr, d_du = rp / beta, rd / beta
        return OutputBound(s, d_pr, d_du, beta * d_pr * d_du, beta)

    def lift(self, c: np.ndarray) -> np.ndarray:
        if self.Z is None:
            raise ValueError("basis vectors were not stored with this model")
        return self.Z[:, : c.shape[-1]] @ c.T


def _batched_solve(A, rhs, ys, N):
    try:
        return np.linalg.solve(A, np.broadcast_to(rhs, A.shape[:2])[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for k in range(A.shape[0]):
            if np.linalg.matrix_rank(A[k]) < N:
                raise ReducedSolveError(f"singular reduced matrix at N={N}, y={ys[k]}") from None
        raise


# ---------------------------------------------------------------------------
# Offline stage
# ---------------------------------------------------------------------------

def _w_orthonormalize(v: np.ndarray, Z: list[np.ndarray], W) -> np.ndarray | None:
    norm0 = np.sqrt(abs(np.vdot(v, W @ v)))
    if norm0 == 0:
        return None
    for _ in range(2):
        for z in Z:
            v = v - np.vdot(z, W @ v) * z
    nrm = np.sqrt(abs(np.vdot(v, W @ v)))
    if nrm < DROP_TOL * norm0:
        return None
    return v / nrm


def _dual_snapshot(sys: AffineSystem, y) -> np.ndarray:
    AH = sys.matrix(y).conj().T.tocsc()
    return np.asarray(sp.linalg.spsolve(AH, -np.conj(sys.ell)))


@dataclass
class GreedyReport:
    N: list = field(default_factory=list)
    max_indicator: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


class _Builder:
    """Incremental reduced data; Riesz vectors are kept so Gram blocks stay exact."""

    def __init__(self, sys: AffineSystem):
        self.sys = sys
        self.Z: list[np.ndarray] = []
        self.Zd: list[np.ndarray] = []
        self.rz_b = sys.riesz(sys.b)
        self.rz_l = sys.riesz(np.conj(sys.ell))
        self.AZ: list[list[np.ndarray]] = [[] for _ in sys.A]  # A_q ζ_n
        self.AZd: list[list[np.ndarray]] = [[] for _ in sys.A]  # A_q^H ζd_n
        self.R: list[list[np.ndarray]] = [[] for _ in sys.A]
        self.Rd: list[list[np.ndarray]] = [[] for _ in sys.A]
        self.W_chol = scipy.linalg.cholesky(sys.W.toarray(), lower=True)

    def factor(self, V: np.ndarray) -> np.ndarray:
        """R with V^H W^{-1} V = R^H R, from a QR of L^{-1} V where W = L L^T."""
        X = scipy.linalg.solve_triangular(self.W_chol, V, lower=True)
        return scipy.linalg.qr(X, mode="r")[0][: min(X.shape)]

    def add(self, z, zd=None):
        self.Z.append(z)
        for q, Aq in enumerate(self.sys.A):
            v = Aq @ z
            self.AZ[q].append(v)
            self.R[q].append(self.sys.riesz(v))
        if zd is not None:
            self.Zd.append(zd)
            for q, Aq in enumerate(self.sys.A):
                v = Aq.conj().T @ zd
                self.AZd[q].append(v)
                self.Rd[q].append(self.sys.riesz(v))

    def model(self, stability: Stability, snapshots) -> RBModel:
        sys = self.sys
        N = len(self.Z)
        Z = np.column_stack(self.Z) if N else np.zeros((sys.n, 0))
        A_pr = np.array([Z.conj().T @ (Aq @ Z) for Aq in sys.A])
        V = np.column_stack([sys.b] + [v for q in range(len(sys.A)) for v in self.AZ[q]])
        R = np.column_stack([self.rz_b] + [v for q in range(len(sys.A)) for v in self.R[q]])
        G = V.conj().T @ R
        G = 0.5 * (G + G.conj().T)
        kw = {"R_pr": self.factor(V)}
        Zd = None
        if not sys.compliant:
            Zd = np.column_stack(self.Zd) if N else np.zeros((sys.n, 0))
            Vd = np.column_stack([np.conj(sys.ell)] + [v for q in range(len(sys.A)) for v in self.AZd[q]])
            Rd = np.column_stack([self.rz_l] + [v for q in range(len(sys.A)) for v in self.Rd[q]])
            Gd = Vd.conj().T @ Rd
            kw |= dict(
                A_du=np.array([Zd.conj().T @ (Aq.conj().T @ Zd) for Aq in sys.A]),
                l_du=Zd.conj().T @ np.conj(sys.ell),
                A_cross=np.array([Zd.conj().T @ (Aq @ Z) for Aq in sys.A]),
                b_du=Zd.conj().T @ sys.b,
                G_du=0.5 * (Gd + Gd.conj().T),
                R_du=self.factor(Vd),
            )
        return RBModel(
            Q=sys.Q, N_max=N, compliant=sys.compliant, A_pr=A_pr, b_pr=Z.conj().T @ sys.b,
            l_pr=sys.ell @ Z, G_pr=G, stability=stability, output_real=sys.output_real,
            snapshots=np.array(snapshots).reshape(N, sys.Q), Z=Z, Zd=Zd, **kw,
        )


def greedy_build(sys: AffineSystem, training: np.ndarray, N_max: int,
                 stability: Stability | None = None, tol: float = 0.0,
                 true_outputs: np.ndarray | None = None) -> tuple[RBModel, GreedyReport]:
    """Greedy construction of hierarchical W-orthonormal primal (and dual) bases.

    The indicator is Δ^s when a stability bound is available, otherwise the
    true output error on the training set (``true_outputs`` computed on demand).
    Linearly dependent snapshots are skipped; the loop stops at ``N_max``, when
    the maximum indicator drops below ``tol`` or the training set is exhausted.
    """
    training = np.atleast_2d(np.asarray(training, dtype=float))
    if training.shape[0] < N_max:
        raise ValueError("training set must hold at least N_max points")
    stability = stability if stability is not None else min_theta_stability(sys)
    use_bound = stability.kind != "unavailable"
    if not use_bound and true_outputs is None:
        from .hdg import outputs_batch
        true_outputs = outputs_batch(sys, training)

    builder = _Builder(sys)
    report = GreedyReport()
    available = np.ones(training.shape[0], dtype=bool)
    snapshots: list[np.ndarray] = []
    while len(builder.Z) < N_max and available.any():
        N = len(builder.Z)
        indicator = _indicator(builder, stability, snapshots, training, N, use_bound, true_outputs)
        masked = np.where(available, indicator, -np.inf)
        order = np.argsort(-masked, kind="stable")
        report.N.append(N)
        report.max_indicator.append(float(masked[order[0]]))
        if masked[order[0]] <= tol:
            break
        accepted = False
        for k in order:
            if not available[k]:
                break
            available[k] = False
            y = training[k]
            z = _w_orthonormalize(solve_full(sys, y).vector, builder.Z, sys.W)
            zd = None
            if z is not None and not sys.compliant:
                zd = _w_orthonormalize(_dual_snapshot(sys, y), builder.Zd, sys.W)
                if zd is None:
                    z = None
            if z is None:
                report.skipped.append(int(k))
                log.debug("skipping dependent snapshot at training index %d", k)
                continue
            builder.add(z, zd)
            snapshots.append(y)
            report.selected.append(int(k))
            accepted = True
            break
        if not accepted:
            break
    return builder.model(stability, snapshots), report


def _indicator(builder, stability, snapshots, training, N, use_bound, true_outputs):
    if N == 0:
        model = None
    else:
        model = builder.model(stability, snapshots)
    if use_bound:
        if model is None:
            beta = stability(training)
            rb = np.sqrt(abs(np.vdot(builder.sys.b, builder.rz_b)))
            rl = rb if builder.sys.compliant else np.sqrt(abs(np.vdot(np.conj(builder.sys.ell), builder.rz_l)))
            return rb * rl / beta
        return model.output_bound(N, training).delta_s
    s_N = np.zeros(training.shape[0]) if model is None else model.outputs(N, training)
    return np.abs(true_outputs - s_N)


# ---------------------------------------------------------------------------
# Text serialisation
# ---------------------------------------------------------------------------

_ARRAYS = ("A_pr", "b_pr", "l_pr", "G_pr", "R_pr", "A_du", "l_du", "A_cross", "b_du", "G_du", "R_du", "snapshots",
           "Z", "Zd")


def _fmt(v) -> str:
    if np.iscomplexobj(v):
        return f"{v.real:.17g} {v.imag:.17g}"
    return f"{v:.17g}"


def save_model(model: RBModel, path, include_basis: bool = True) -> None:
    """Plain-text model: a header, then each array as ``name dtype ndim dims`` and row-major values."""
    lines = ["# mvrhdg rb-model v1"]
    lines.append(f"Q {model.Q}")
    lines.append(f"N_max {model.N_max}")
    lines.append(f"compliant {int(model.compliant)}")
    lines.append(f"output_real {int(model.output_real)}")
    st = model.stability
    lines.append(f"stability {st.kind} {st.beta:.17g}")
    if st.kind == "min-theta":
        lines.append("y_ref " + " ".join(f"{v:.17g}" for v in st.y_ref))
        lines.append("active " + " ".join(str(int(v)) for v in st.active))
    for name in _ARRAYS:
        arr = getattr(model, name)
        if arr is None or (name in ("Z", "Zd") and not include_basis):
            continue
        arr = np.asarray(arr)
        kind = "complex" if np.iscomplexobj(arr) else "real"
        lines.append(f"array {name} {kind} {arr.ndim} " + " ".join(str(d) for d in arr.shape))
        lines.extend(_fmt(v) for v in arr.ravel())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> RBModel:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("# mvrhdg rb-model"):
        raise ValueError(f"{path}: not an RB model file")
    head, arrays = {}, {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] == "array":
            name, kind, ndim = parts[1], parts[2], int(parts[3])
            shape = tuple(int(d) for d in parts[4:4 + ndim])
            n = int(np.prod(shape))
            vals = np.array([ln.split() for ln in lines[i + 1:i + 1 + n]], dtype=float).reshape(n, -1)
            data = vals[:, 0] + 1j * vals[:, 1] if kind == "complex" else vals[:, 0]
            arrays[name] = data.reshape(shape)
            i += 1 + n
        else:
            head[parts[0]] = parts[1:]
            i += 1
    kind, beta = head["stability"][0], float(head["stability"][1])
    if kind == "min-theta":
        stab = Stability(kind, beta, np.array(head["y_ref"], dtype=float), np.array(head["active"], dtype=int).astype(bool))
    else:
        stab = Stability(kind, beta)
    return RBModel(
        Q=int(head["Q"][0]), N_max=int(head["N_max"][0]), compliant=bool(int(head["compliant"][0])),
        output_real=bool(int(head["output_real"][0])), stability=stab,
        **{k: v for k, v in arrays.items()},
    )

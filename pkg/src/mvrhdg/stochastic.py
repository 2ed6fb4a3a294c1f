"""Stochastic coefficient model, parameter sampling and the 1D heat-diffusion oracle."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# Parameter domain and sampling
# ---------------------------------------------------------------------------

def _uniform_sampler(lo: np.ndarray, hi: np.ndarray, u: np.ndarray) -> np.ndarray:
    return lo + (hi - lo) * u


# Marginal density tags map to inverse-CDF samplers acting on U(0,1) draws.
MARGINALS: dict[str, Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = {
    "uniform": _uniform_sampler,
}


@dataclass(frozen=True)
class ParameterDomain:
    """Box Λ = Π_q [lo_q, hi_q] with a product density."""

    bounds: np.ndarray
    densities: tuple[str, ...] = ()

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] < 1:
            raise ValueError("bounds must have shape (Q, 2) with Q >= 1")
        if np.any(b[:, 0] > b[:, 1]):
            raise ValueError("each interval needs lo <= hi")
        b.setflags(write=False)
        object.__setattr__(self, "bounds", b)
        dens = tuple(self.densities) or ("uniform",) * b.shape[0]
        if len(dens) != b.shape[0]:
            raise ValueError("one density tag per coordinate")
        for tag in dens:
            if tag not in MARGINALS:
                raise ValueError(f"unsupported marginal density {tag!r}")
        object.__setattr__(self, "densities", dens)

    @classmethod
    def uniform(cls, Q: int, lo: float, hi: float) -> "ParameterDomain":
        return cls(np.tile([lo, hi], (Q, 1)))

    @property
    def Q(self) -> int:
        return self.bounds.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1]

    def contains(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all((y >= self.lower) & (y <= self.upper)))

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map U(0,1) draws of shape (m, Q) to the product density."""
        out = np.empty_like(u)
        for q, tag in enumerate(self.densities):
            out[:, q] = MARGINALS[tag](self.lower[q], self.upper[q], u[:, q])
        return out


@dataclass
class SampleStream:
    """Seeded stream of parameter draws.

    Streams with the same ``(seed, level_tag, replication)`` produce identical
    sequences; distinct keys are spawned from one ``SeedSequence`` tree and are
    independent by construction.
    """

    seed: int
    level_tag: int = 0
    replication: int = 0
    counter: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.replication, self.level_tag))
        self._gen = np.random.Generator(np.random.PCG64(ss))
        if self.counter:
            self._gen.random(self.counter)

    def uniforms(self, n: int) -> np.ndarray:
        self.counter += n
        return self._gen.random(n)

    def clone(self) -> "SampleStream":
        return copy.deepcopy(self)


def draw_samples(stream: SampleStream, domain: ParameterDomain, m: int) -> np.ndarray:
    """Draw ``m`` i.i.d. parameter vectors, returned as rows of an (m, Q) array."""
    if m < 1:
        raise ValueError("m must be >= 1")
    u = stream.uniforms(m * domain.Q).reshape(m, domain.Q)
    return domain.transform(u)


# ---------------------------------------------------------------------------
# Spatial fields
# ---------------------------------------------------------------------------

class PiecewiseConstantField:
    """Piecewise-constant function on [breaks[0], breaks[-1]].

    Element evaluation uses the element midpoint to locate the piece, so values
    on an element boundary are the limits from inside that element. Elements
    must not straddle a breakpoint.
    """

    def __init__(self, breaks: Sequence[float], values: Sequence[float]):
        self.breaks = np.asarray(breaks, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.breaks.size != self.values.size + 1:
            raise ValueError("need len(breaks) == len(values) + 1")
        if np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breakpoints must be strictly increasing")

    def piece(self, x: float) -> int:
        k = int(np.searchsorted(self.breaks, x, side="right")) - 1
        return min(max(k, 0), self.values.size - 1)

    def element_values(self, a: float, b: float, x: np.ndarray) -> np.ndarray:
        k = self.piece(0.5 * (a + b))
        tol = 1e-12 * max(1.0, abs(b - a))
        if self.breaks[k] > a + tol or self.breaks[k + 1] < b - tol:
            raise ValueError(f"element [{a}, {b}] straddles a breakpoint of a piecewise-constant field")
        return np.full(np.shape(x), self.values[k])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, self.values.size - 1)
        return self.values[idx]


class FunctionField:
    """Wraps a vectorised callable; assumed continuous inside each element."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray]):
        self.func = func

    def element_values(self, a: float, b: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.func(x), dtype=float), np.shape(x)).copy()

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))


class ConstantField(FunctionField):
    def __init__(self, value: float):
        self.value = value
        super().__init__(lambda x: np.full(np.shape(x), value, dtype=float))


class AffineCombinationField:
    """Σ_k w_k F_k evaluated elementwise; used for direct (non-affine) assembly."""

    def __init__(self, fields: Sequence, weights: Sequence[float]):
        self.fields = list(fields)
        self.weights = list(weights)

    def element_values(self, a, b, x):
        out = np.zeros(np.shape(x))
        for w, f in zip(self.weights, self.fields):
            out = out + w * f.element_values(a, b, x)
        return out


@dataclass
class RandomFieldExpansion:
    """κ(x, y) = mean(x) + Σ_q modes[q](x) y_q."""

    mean: object
    modes: list

    @property
    def Q(self) -> int:
        return len(self.modes)

    def at(self, y) -> AffineCombinationField:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.Q,):
            raise ValueError(f"expected {self.Q} parameters, got shape {y.shape}")
        return AffineCombinationField([self.mean, *self.modes], [1.0, *y])

    def bounds_on_element(self, a: float, b: float, x: np.ndarray, domain: ParameterDomain):
        """Pointwise (min, max) of κ over the parameter box at points x of element [a, b]."""
        lo = self.mean.element_values(a, b, x).astype(float)
        hi = lo.copy()
        for q, mode in enumerate(self.modes):
            v = mode.element_values(a, b, x)
            c1, c2 = v * domain.lower[q], v * domain.upper[q]
            lo += np.minimum(c1, c2)
            hi += np.maximum(c1, c2)
        return lo, hi


def piecewise_constant_expansion(Q: int, mean: float = 0.0) -> RandomFieldExpansion:
    """Q equal subdomains of [0, 1], mode q is the indicator of subdomain q."""
    breaks = np.linspace(0.0, 1.0, Q + 1)
    modes = [PiecewiseConstantField(breaks, np.eye(Q)[q]) for q in range(Q)]
    return RandomFieldExpansion(PiecewiseConstantField(breaks, np.full(Q, mean)), modes)


def tabulated_expansion(breaks, mean_values, mode_values) -> RandomFieldExpansion:
    """Piecewise-constant field from user tables; ``mode_values`` has shape (Q, pieces)."""
    mode_values = np.atleast_2d(np.asarray(mode_values, dtype=float))
    modes = [PiecewiseConstantField(breaks, row) for row in mode_values]
    return RandomFieldExpansion(PiecewiseConstantField(breaks, mean_values), modes)


# ---------------------------------------------------------------------------
# Closed-form oracle for -(κ u')' = c on (0,1), u(0) = 0, κu'(1) = 0
# ---------------------------------------------------------------------------

def _check_positive(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("piecewise-constant diffusivity must be strictly positive")
    return y


def analytic_solution_1d(y, x: float, source: float = 1.0) -> float:
    """u(x, y) = ∫_0^x (1/κ(z)) ∫_z^1 f dξ dz for κ piecewise constant with values y and f ≡ source."""
    y = _check_positive(y)
    Q = y.size
    total = 0.0
    for q in range(Q):
        a, b = q / Q, (q + 1) / Q
        if x <= a:
            break
        b = min(b, x)
        total += ((1 - a) ** 2 - (1 - b) ** 2) / (2 * y[q])
    return source * total


def output_coefficients(Q: int) -> list[Fraction]:
    """Exact c_q = ∫_{D_q} (1 - z)^2 dz with D_q = ((q-1)/Q, q/Q)."""
    return [
        (Fraction(Q - q, Q) ** 3 - Fraction(Q - q - 1, Q) ** 3) / 3 for q in range(Q)
    ]


def analytic_output_1d(y, source: float = 1.0) -> np.ndarray:
    """s(y) = ∫_0^1 u dx = source * Σ_q c_q / y_q; accepts a single y or rows of y."""
    y = _check_positive(y)
    c = np.array([float(v) for v in output_coefficients(y.shape[-1])])
    return source * (1.0 / y) @ c


def _inverse_moments(lo: float, hi: float) -> tuple[float, float]:
    """E[1/y], E[1/y^2] for y ~ U[lo, hi]."""
    if lo <= 0:
        raise ValueError("uniform marginals must have a positive lower bound")
    if hi == lo:
        return 1.0 / lo, 1.0 / lo**2
    return math.log(hi / lo) / (hi - lo), 1.0 / (lo * hi)


def analytic_moments_1d(domain: ParameterDomain, source: float = 1.0) -> tuple[float, float]:
    """Exact (E[s], V[s]) of the heat benchmark output under independent uniform marginals."""
    if any(tag != "uniform" for tag in domain.densities):
        raise ValueError("closed-form moments need uniform marginals")
    c = output_coefficients(domain.Q)
    mean = var = 0.0
    for q in range(domain.Q):
        m1, m2 = _inverse_moments(domain.lower[q], domain.upper[q])
        mean += float(c[q]) * m1
        var += float(c[q] ** 2) * max(m2 - m1 * m1, 0.0)
    return source * mean, source**2 * var

"""Plain Monte Carlo estimators, CLT half-widths and MC-RB error bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

A_95 = 1.96
A_999 = 3.3


def confidence(a: float) -> float:
    """Asymptotic coverage erf(a / √2) of a CLT interval with coefficient a."""
    return math.erf(a / math.sqrt(2.0))


@dataclass(frozen=True)
class Estimate:
    value: float
    half_width: float
    M: tuple[int, ...]
    a: float = A_95

    def __post_init__(self):
        if not self.half_width >= 0:
            raise ValueError("half width must be non-negative")

    @property
    def confidence(self) -> float:
        return confidence(self.a)


def _as_samples(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 1:
        raise ValueError("need at least one sample")
    if not np.all(np.isfinite(v)):
        raise ValueError("samples must be finite")
    return v


def mean(values) -> float:
    v = _as_samples(values)
    return math.fsum(v) / v.size


def mc_mean_var(values) -> tuple[float, float]:
    """(E_M, V_M) with the unbiased 1/(M-1) variance; compensated summation throughout."""
    v = _as_samples(values)
    if v.size < 2:
        raise ValueError("variance needs M >= 2")
    m = math.fsum(v) / v.size
    d = v - m
    return m, math.fsum(d * d) / (v.size - 1)


def clt_halfwidth(V: float, M: int, a: float = A_95) -> float:
    if M < 2 or a <= 0:
        raise ValueError("need M >= 2 and a > 0")
    return a * math.sqrt(max(V, 0.0) / M)


def mc_estimates(values, a: float = A_95) -> tuple[Estimate, Estimate]:
    """MC estimates of E[s] and V[s] with their CLT half-widths.

    The variance half-width uses the sample variance of (s - E_M)^2.
    """
    v = _as_samples(values)
    m, var = mc_mean_var(v)
    _, var_sq = mc_mean_var((v - m) ** 2)
    M = (v.size,)
    return (Estimate(m, clt_halfwidth(var, v.size, a), M, a),
            Estimate(var, clt_halfwidth(var_sq, v.size, a), M, a))


def mc_rb_expectation_bound(delta_s) -> float:
    """Δ^E_{N,M}: sample mean of the RB output bounds."""
    d = _as_samples(delta_s)
    if np.any(d < 0):
        raise ValueError("output bounds must be non-negative")
    return math.fsum(d) / d.size


def mc_rb_variance_bound(s_N, delta_s, delta_E: float) -> float:
    """Δ^V_{N,M} = 1/(M-1) Σ (Δ^s_m + Δ^E)(Δ^s_m + 2|s_N,m|)."""
    s = _as_samples(s_N)
    d = _as_samples(delta_s)
    if s.size < 2 or s.size != d.size:
        raise ValueError("need matching samples with M >= 2")
    return math.fsum((d + delta_E) * (d + 2 * np.abs(s))) / (s.size - 1)


def mc_rb_total_bound(V_sN: float, delta_V: float, M: int, a: float, delta_E: float) -> float:
    """Δ̃^E_{N,M} = a √((V_M[s_N] + Δ^V)/M) + Δ^E; tends to Δ^E as M grows."""
    if min(V_sN, delta_V, delta_E) < 0:
        raise ValueError("bound components must be non-negative")
    return a * math.sqrt((V_sN + delta_V) / M) + delta_E


def mc_rb_estimate(s_N, delta_s, a: float = A_95) -> tuple[Estimate, dict]:
    """MC-RB expectation with the composite bound, plus its components."""
    E, V = mc_mean_var(s_N)
    dE = mc_rb_expectation_bound(delta_s)
    dV = mc_rb_variance_bound(s_N, delta_s, dE)
    total = mc_rb_total_bound(V, dV, len(s_N), a, dE)
    return Estimate(E, total, (len(s_N),), a), {"V": V, "delta_E": dE, "delta_V": dV}


def optimal_cv_gamma(X, Y) -> float:
    """Control-variate coefficient Cov(X, Y)/V[Y] from paired samples."""
    x, y = _as_samples(X), _as_samples(Y)
    if x.size != y.size or x.size < 2:
        raise ValueError("need paired samples with M >= 2")
    my = math.fsum(y) / y.size
    vy = math.fsum((y - my) ** 2)
    if vy == 0:
        raise ZeroDivisionError("V[Y] = 0: control-variate coefficient undefined")
    mx = math.fsum(x) / x.size
    return math.fsum((x - mx) * (y - my)) / vy

"""Multilevel model-and-variance-reduction (L-MVR) estimators and level selection.

Level 0 samples s_h - s_{N_1}, level l (1 <= l < L) samples s_{N_l} - s_{N_{l+1}}
and level L samples s_{N_L}, each on its own independent parameter set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .montecarlo import A_95, mc_mean_var
from .stochastic import ParameterDomain, SampleStream, draw_samples

MIN_SAMPLES = 30
WEIGHT_FLOOR = 1e-6


class ConfigurationError(ValueError):
    pass


class AdaptiveDivergence(RuntimeError):
    pass


class Channels(Protocol):
    def full(self, ys: np.ndarray) -> np.ndarray: ...
    def rb(self, N: int, ys: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class LevelSpec:
    N: tuple[int, ...]

    def __post_init__(self):
        N = tuple(int(n) for n in self.N)
        if not N:
            raise ConfigurationError("need at least one RB level")
        if any(a <= b for a, b in zip(N, N[1:])) or N[-1] < 1:
            raise ConfigurationError(f"RB dimensions must be strictly decreasing and >= 1, got {N}")
        object.__setattr__(self, "N", N)

    @property
    def L(self) -> int:
        return len(self.N)


@dataclass
class LevelData:
    """Outputs of the finer and coarser model on one level's samples (coarse is None on level L)."""

    fine: np.ndarray
    coarse: np.ndarray | None = None

    @property
    def z(self) -> np.ndarray:
        return self.fine if self.coarse is None else self.fine - self.coarse

    @property
    def M(self) -> int:
        return self.fine.size

    def extend(self, other: "LevelData") -> "LevelData":
        coarse = None if self.coarse is None else np.concatenate([self.coarse, other.coarse])
        return LevelData(np.concatenate([self.fine, other.fine]), coarse)


@dataclass
class MVREstimate:
    E: float
    dE: float
    M: tuple[int, ...]
    a: float
    level_means: list[float]
    level_vars: list[float]
    V: float = float("nan")
    dV: float = float("nan")
    zeta_means: list[float] = field(default_factory=list)
    zeta_vars: list[float] = field(default_factory=list)
    predicted_bias: float = float("nan")


def level_outputs(spec: LevelSpec, channels: Channels, level: int, ys: np.ndarray) -> LevelData:
    N = spec.N
    if level == 0:
        return LevelData(np.asarray(channels.full(ys), dtype=float), np.asarray(channels.rb(N[0], ys), dtype=float))
    if level < spec.L:
        return LevelData(channels.rb(N[level - 1], ys), channels.rb(N[level], ys))
    if level == spec.L:
        return LevelData(channels.rb(N[-1], ys))
    raise ValueError(f"level {level} out of range for L={spec.L}")


def _check_levels(levels: Sequence[LevelData]):
    if len(levels) < 2:
        raise ConfigurationError("need L + 1 >= 2 levels")
    if levels[-1].coarse is not None or any(lv.coarse is None for lv in levels[:-1]):
        raise ConfigurationError("only the last level may lack a coarse channel")
    if any(lv.M < 2 for lv in levels):
        raise ValueError("each level needs at least two samples")


def multilevel_expectation(levels: Sequence[LevelData], a: float = A_95) -> MVREstimate:
    """Telescoping estimate of E[s_h] with half-width a √(Σ V_{M_l}[z_l]/M_l)."""
    _check_levels(levels)
    stats = [mc_mean_var(lv.z) for lv in levels]
    means = [m for m, _ in stats]
    vars_ = [v for _, v in stats]
    M = tuple(lv.M for lv in levels)
    dE = a * math.sqrt(sum(v / m for v, m in zip(vars_, M)))
    return MVREstimate(math.fsum(means), dE, M, a, means, vars_)


def _zeta(levels, center):
    out = []
    for lv in levels:
        zf = (lv.fine - center) ** 2
        out.append(zf if lv.coarse is None else zf - (lv.coarse - center) ** 2)
    return out


def multilevel_variance(levels: Sequence[LevelData], est: MVREstimate | None = None, a: float = A_95,
                        center: float | None = None) -> MVREstimate:
    """Telescoping estimate of V[s_h] using ζ = (s - E_MVR)^2 on every level.

    Fills V, ΔV and the predicted bias -Σ V_{M_l}[z_l]/M_l into the estimate.
    ``center`` replaces E_MVR when given (auxiliary unbiased variant).
    """
    est = est if est is not None else multilevel_expectation(levels, a)
    c = est.E if center is None else center
    stats = [mc_mean_var(z) for z in _zeta(levels, c)]
    est.zeta_means = [m for m, _ in stats]
    est.zeta_vars = [v for _, v in stats]
    est.V = math.fsum(est.zeta_means)
    est.dV = est.a * math.sqrt(sum(v / m for v, m in zip(est.zeta_vars, est.M)))
    est.predicted_bias = -sum(v / m for v, m in zip(est.level_vars, est.M))
    return est


def two_level_estimate(full0, rb0, rb1, a: float = A_95) -> MVREstimate:
    """1-MVR estimate from s_h, s_{N_1} on Y^0 and s_{N_1} on Y^1."""
    levels = [LevelData(np.asarray(full0, float), np.asarray(rb0, float)), LevelData(np.asarray(rb1, float))]
    return multilevel_variance(levels, multilevel_expectation(levels, a))


def check_independent(streams: Sequence[SampleStream]):
    keys = [(s.seed, s.replication, s.level_tag) for s in streams]
    if len(set(keys)) != len(keys):
        raise ConfigurationError("level sample streams must be independent (distinct level tags)")


def run_levels(spec: LevelSpec, channels: Channels, domain: ParameterDomain,
               streams: Sequence[SampleStream], M: Sequence[int], a: float = A_95) -> MVREstimate:
    """Draw M_l samples per level from its own stream and return the full L-MVR estimate."""
    if len(streams) != spec.L + 1 or len(M) != spec.L + 1:
        raise ConfigurationError("need one stream and one sample size per level")
    check_independent(streams)
    levels = [level_outputs(spec, channels, l, draw_samples(s, domain, m)) for l, (s, m) in enumerate(zip(streams, M))]
    return multilevel_variance(levels, multilevel_expectation(levels, a))


# ---------------------------------------------------------------------------
# Cost model and level selection
# ---------------------------------------------------------------------------

@dataclass
class TestSetCache:
    """Outputs on the test set: s_h (M̂,), s_N (N_max, M̂) with row N-1, and timings."""

    s_h: np.ndarray
    s_N: np.ndarray
    t_h: float
    t_N: np.ndarray

    @property
    def N_max(self) -> int:
        return self.s_N.shape[0]

    def rb(self, N: int) -> np.ndarray:
        if not 1 <= N <= self.N_max:
            raise KeyError(f"no cached RB outputs for N={N}")
        return self.s_N[N - 1]

    def t(self, N: int) -> float:
        return float(self.t_N[N - 1])


def level_costs(I: Sequence[int], cache: TestSetCache) -> np.ndarray:
    """Per-level Ĉ^l(I): test-set variance of the level variable times its per-sample cost."""
    spec = LevelSpec(tuple(I))
    I = spec.N
    out = [mc_mean_var(cache.s_h - cache.rb(I[0]))[1] * (cache.t_h + cache.t(I[0]))]
    for l in range(len(I) - 1):
        out.append(mc_mean_var(cache.rb(I[l]) - cache.rb(I[l + 1]))[1] * (cache.t(I[l]) + cache.t(I[l + 1])))
    out.append(cache.t(I[-1]) * mc_mean_var(cache.rb(I[-1]))[1])
    return np.array(out)


def equivalent_cost(I: Sequence[int], cache: TestSetCache, w=None) -> tuple[float, np.ndarray]:
    """Ĉ_L(I, w) = Σ Ĉ^l / w_l; KKT-optimal weights when w is None."""
    c = level_costs(I, cache)
    w = optimal_weights(c) if w is None else np.asarray(w, dtype=float)
    return float(np.sum(c / w)), c


def optimal_weights(costs) -> np.ndarray:
    """w_l ∝ √Ĉ^l; exact-zero levels get the floor weight, all-zero gives uniform weights."""
    c = np.asarray(costs, dtype=float)
    if np.any(c < 0):
        raise ValueError("level costs must be non-negative")
    if not np.any(c > 0):
        return np.full(c.size, 1.0 / c.size)
    r = np.sqrt(c)
    w = r / r.sum()
    zero = c == 0
    if np.any(zero):
        w[zero] = WEIGHT_FLOOR
        w[~zero] *= (1.0 - WEIGHT_FLOOR * zero.sum()) / w[~zero].sum()
    return w


@dataclass
class LevelPlan:
    spec: LevelSpec
    weights: np.ndarray
    cost: float  # predicted equivalent cost Ĉ_L
    level_costs: np.ndarray
    t_h: float
    t_N: np.ndarray  # per-level RB timings t_{N_1..N_L}
    M: tuple[int, ...] = ()

    @property
    def L(self) -> int:
        return self.spec.L

    def per_sample_cost(self) -> np.ndarray:
        t = list(self.t_N)
        c = [self.t_h + t[0]] + [t[l] + t[l + 1] for l in range(self.L - 1)] + [t[-1]]
        return np.array(c)

    def predicted_speedup(self, V_h: float) -> float:
        """π_L = t_h V[s_h] / Ĉ_L (ratio of MC-HDG to L-MVR cost at equal tolerance)."""
        return self.t_h * V_h / self.cost


def select_levels(L: int, cache: TestSetCache) -> LevelPlan:
    """Exhaustive arg min of Ĉ_L(I, w^I) over strictly decreasing L-tuples; ties go to the lexicographically smallest."""
    if L < 1 or cache.N_max <= L - 1:
        raise ConfigurationError(f"no feasible {L}-tuple with N_max={cache.N_max}")
    best = None
    for I in sorted(itertools.combinations(range(cache.N_max, 0, -1), L)):
        cost, c = equivalent_cost(I, cache)
        if best is None or cost < best[0]:
            best = (cost, I, c)
    if best is None:
        raise ConfigurationError("empty feasible set")
    cost, I, c = best
    return LevelPlan(LevelSpec(I), optimal_weights(c), cost, c, cache.t_h, np.array([cache.t(n) for n in I]))


def compare_level_counts(Ls: Sequence[int], cache: TestSetCache) -> list[dict]:
    """A priori comparison table: one row per L with its plan and Ĉ_L / min Ĉ."""
    plans = [select_levels(L, cache) for L in Ls]
    best = min(p.cost for p in plans)
    return [
        {"L": p.L, "N": p.spec.N, "w": p.weights, "C_hat": p.cost, "C_hat_rel": p.cost / best, "plan": p}
        for p in plans
    ]


# ---------------------------------------------------------------------------
# Adaptive sampling to a tolerance
# ---------------------------------------------------------------------------

@dataclass
class AdaptiveResult:
    estimate: MVREstimate
    M: tuple[int, ...]
    T: float  # online time model Σ M_l c_l
    cost: float  # C_L = T ε² / a²
    speedup: float
    M_equiv: float
    rounds: int


def required_samples(var: float, w: float, eps: float, a: float) -> float:
    return a * a * var / (w * eps * eps)


def adaptive_run(plan: LevelPlan, channels: Channels, domain: ParameterDomain,
                 streams: Sequence[SampleStream], eps: float, a: float = A_95,
                 min_samples: int = MIN_SAMPLES, safety: float = 1.1, max_growth: float = 2.0,
                 level0: LevelData | None = None, max_rounds: int = 200) -> AdaptiveResult:
    """Grow every level until M_l >= a² V_{M_l}[z_l] / (w_l ε²) and M_l >= min_samples.

    Each round targets ceil(safety · requirement) samples, capped at
    ``max_growth`` times the current size. ``level0`` seeds level 0 with
    precomputed outputs (e.g. the test set).
    """
    if eps <= 0:
        raise ValueError("tolerance must be positive")
    spec, w = plan.spec, plan.weights
    if len(streams) != spec.L + 1:
        raise ConfigurationError("need one stream per level")
    check_independent(streams)
    levels: list[LevelData] = []
    for l, s in enumerate(streams):
        if l == 0 and level0 is not None:
            levels.append(level0)
            if level0.M < min_samples:
                levels[0] = level0.extend(level_outputs(spec, channels, 0, draw_samples(s, domain, min_samples - level0.M)))
        else:
            levels.append(level_outputs(spec, channels, l, draw_samples(s, domain, min_samples)))
    history: list[list[float]] = [[] for _ in levels]
    rounds = 0
    while True:
        vars_ = [mc_mean_var(lv.z)[1] for lv in levels]
        for h, v in zip(history, vars_):
            h.append(v)
            if len(h) >= 4 and all(h[-k] > h[-k - 1] for k in (1, 2, 3)) and h[-1] > 10 * h[-4]:
                raise AdaptiveDivergence(f"level variance estimates keep growing: {h[-4:]}")
        need = [max(math.ceil(required_samples(v, wl, eps, a)), min_samples) for v, wl in zip(vars_, w)]
        short = [l for l, (lv, n) in enumerate(zip(levels, need)) if lv.M < n]
        if not short:
            break
        rounds += 1
        if rounds > max_rounds:
            raise AdaptiveDivergence(f"no convergence after {max_rounds} rounds; M = {[lv.M for lv in levels]}")
        for l in short:
            target = min(math.ceil(safety * need[l]), int(max_growth * levels[l].M))
            extra = max(target - levels[l].M, 1)
            new = level_outputs(spec, channels, l, draw_samples(streams[l], domain, extra))
            levels[l] = levels[l].extend(new)
    est = multilevel_variance(levels, multilevel_expectation(levels, a))
    M = tuple(lv.M for lv in levels)
    T = float(np.dot(M, plan.per_sample_cost()))
    M_equiv = a * a * max(est.V, 0.0) / eps**2
    return AdaptiveResult(est, M, T, T * eps**2 / a**2, plan.t_h * M_equiv / T, M_equiv, rounds)

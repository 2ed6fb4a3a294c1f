"""Experiment orchestration shared by the CLI and the scripts."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channels import Channels, analytic_channels, build_test_cache, hdg_channels, measure_timings
from .config import ConfigError, ExperimentConfig
from .hdg import AffineSystem, BoundaryCondition, DiscreteSpaces, Mesh1D, assemble_affine, outputs_batch
from .montecarlo import mc_estimates, mc_mean_var, mc_rb_estimate
from .mvr import (LevelPlan, LevelSpec, TestSetCache, adaptive_run, compare_level_counts, equivalent_cost,
                  optimal_weights, run_levels)
from .rb import GreedyReport, RBModel, greedy_build
from .results import NAN, ResultRow
from .stochastic import (ParameterDomain, SampleStream, analytic_moments_1d, analytic_output_1d, draw_samples,
                         piecewise_constant_expansion, tabulated_expansion)

TRAINING_TAG = 1000
TEST_TAG = 1001


@dataclass
class Problem:
    cfg: ExperimentConfig
    system: AffineSystem
    domain: ParameterDomain

    @property
    def truth(self) -> tuple[float, float]:
        """(E[s], V[s]) in closed form for the heat benchmark, NaN otherwise."""
        if not self.cfg.is_benchmark():
            return NAN, NAN
        return analytic_moments_1d(self.domain, self.cfg.model.source)


def _bc(spec) -> BoundaryCondition:
    if spec.kind == "dirichlet":
        return BoundaryCondition.dirichlet()
    if spec.kind == "neumann":
        return BoundaryCondition.neumann(spec.g)
    return BoundaryCondition("robin", spec.nu, spec.g)


def build_problem(cfg: ExperimentConfig) -> Problem:
    m, d = cfg.model, cfg.discretization
    domain = ParameterDomain(np.array(cfg.interval_list()))
    if m.field == "tabulated":
        if m.breaks is None or m.mean_values is None or m.mode_values is None:
            raise ConfigError("model.field 'tabulated' needs breaks, mean_values and mode_values")
        field = tabulated_expansion(m.breaks, m.mean_values, m.mode_values)
        if field.Q != m.Q:
            raise ConfigError("model.mode_values must have Q rows")
    else:
        field = piecewise_constant_expansion(m.Q, m.mean)
    bcs = (_bc(m.left), _bc(m.right))
    rho = m.rho
    if m.mode == "complex":
        rho = -m.wavenumber**2
        bcs = (bcs[0], BoundaryCondition("robin", -1j * m.wavenumber, m.right.g))
    try:
        system = assemble_affine(
            DiscreteSpaces(Mesh1D.uniform(d.elements), d.p), field, rho=rho, bcs=bcs, source=m.source,
            tau=d.tau, domain=domain, output_real=m.output_real,
            compliant=cfg.rb.compliant,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return Problem(cfg, system, domain)


def training_set(cfg: ExperimentConfig, domain: ParameterDomain) -> np.ndarray:
    return draw_samples(SampleStream(int(cfg.rb.seed), TRAINING_TAG), domain, cfg.rb.training_size)


def test_set(cfg: ExperimentConfig, domain: ParameterDomain) -> np.ndarray:
    return draw_samples(SampleStream(int(cfg.rb.seed), TEST_TAG), domain, cfg.mvr.test_size)


def build_rb(problem: Problem) -> tuple[RBModel, GreedyReport, list[dict]]:
    """Offline stage plus the convergence table (max/avg Δ^s and true output error vs N on the test set)."""
    cfg = problem.cfg
    model, report = greedy_build(problem.system, training_set(cfg, problem.domain), cfg.rb.N_max)
    table = convergence_table(problem, model)
    return model, report, table


def convergence_table(problem: Problem, model: RBModel) -> list[dict]:
    ys = test_set(problem.cfg, problem.domain)
    s_h = outputs_batch(problem.system, ys)
    rows = []
    bounded = model.stability.kind != "unavailable"
    for N in range(1, model.N_max + 1):
        if bounded:
            ob = model.output_bound(N, ys)
            s_N, ds = ob.s_N, ob.delta_s
        else:
            s_N, ds = model.outputs(N, ys), np.full(ys.shape[0], NAN)
        err = np.abs(s_h - s_N)
        rows.append({"N": N, "max_delta_s": float(ds.max()), "avg_delta_s": float(ds.mean()),
                     "max_error": float(err.max()), "avg_error": float(err.mean()),
                     "violations": int(np.sum(err > ds)) if bounded else 0})
    return rows


def make_channels(problem: Problem, model: RBModel | None) -> Channels:
    if problem.cfg.mc.full_model == "analytic":
        return analytic_channels(model, problem.cfg.model.source, timing_system=problem.system)
    return hdg_channels(problem.system, model)


def timings(problem: Problem, channels: Channels, deterministic: bool = False) -> tuple[float, np.ndarray]:
    """Configured cost model, else medians of warm single evaluations."""
    t = problem.cfg.mvr.timings
    if t is not None:
        return float(t.t_h), np.asarray(t.t_N, dtype=float)
    if deterministic:
        raise ConfigError("deterministic mode needs mvr.timings (measured wall times are not reproducible)")
    y = 0.5 * (problem.domain.lower + problem.domain.upper)
    return measure_timings(channels, y, channels.model.N_max)


def replicate(fn: Callable[[int], list], H: int, threads: int = 1) -> list:
    """Run fn(r) for r = 0..H-1 and concatenate results in replication order."""
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(fn, range(H)))
    else:
        parts = [fn(r) for r in range(H)]
    return [row for part in parts for row in part]


def _err(est, truth):
    return abs(est - truth) if math.isfinite(truth) else NAN


# ---------------------------------------------------------------------------
# One replication of each method
# ---------------------------------------------------------------------------

def mc_hdg_replication(channels: Channels, domain, seed: int, rep: int, schedule: Sequence[int], a: float,
                       truth=(NAN, NAN), t_h: float = NAN, experiment: str = "mc-hdg") -> list[ResultRow]:
    stream = SampleStream(seed, 0, rep)
    rows = []
    for M in schedule:
        s = channels.full(draw_samples(stream, domain, int(M)))
        E, V = mc_estimates(s, a)
        rows.append(ResultRow(
            experiment, "MC-HDG", str(rep), (int(M),), (),
            E.value, _err(E.value, truth[0]), E.half_width / a, 0.0, E.half_width,
            V.value, _err(V.value, truth[1]), V.half_width / a, 0.0, V.half_width,
            NAN, a, float(M), t_h, M * t_h, 1.0,
        ))
    return rows


def mc_rb_replication(channels: Channels, domain, seed: int, rep: int, schedule: Sequence[int], N: int, a: float,
                      truth=(NAN, NAN), t_N: float = NAN, experiment: str = "mc-rb") -> list[ResultRow]:
    stream = SampleStream(seed, 0, rep)
    bounded = channels.model.stability.kind != "unavailable"
    rows = []
    for M in schedule:
        ys = draw_samples(stream, domain, int(M))
        if bounded:
            s_N, ds = _chunked_bound(channels, N, ys)
            est, parts = mc_rb_estimate(s_N, ds, a)
            fac = math.sqrt((parts["V"] + parts["delta_V"]) / M)
            dE, dV = parts["delta_E"], parts["delta_V"]
        else:
            s_N = channels.rb(N, ys)
            fac = math.sqrt(mc_mean_var(s_N)[1] / M)
            dE = dV = NAN
        E, V = mc_estimates(s_N, a)
        v_fac = V.half_width / a
        rows.append(ResultRow(
            experiment, "MC-RB", str(rep), (int(M),), (N,),
            E.value, _err(E.value, truth[0]), fac, dE, a * fac + dE,
            V.value, _err(V.value, truth[1]), v_fac, dV, a * v_fac + dV,
            NAN, a, 0.0, NAN, M * t_N, NAN,
        ))
    return rows


def _chunked_bound(channels: Channels, N: int, ys, chunk: int = 100_000):
    s, d = [], []
    for i in range(0, ys.shape[0], chunk):
        a, b = channels.rb_with_bound(N, ys[i:i + chunk])
        s.append(a)
        d.append(b)
    return np.concatenate(s), np.concatenate(d)


def mvr_replication(channels: Channels, domain, seed: int, rep: int, schedule: Sequence[int], N: Sequence[int],
                    M0_fraction: float, a: float, truth=(NAN, NAN), per_sample_cost=None,
                    experiment: str = "mvr") -> list[ResultRow]:
    """Fixed-size L-MVR: M_0 = M0_fraction * M on level 0 and M on every other level."""
    spec = LevelSpec(tuple(N))
    streams = [SampleStream(seed, l, rep) for l in range(spec.L + 1)]
    rows = []
    for M in schedule:
        Ms = [max(2, int(round(M0_fraction * M)))] + [int(M)] * spec.L
        est = run_levels(spec, channels, domain, streams, Ms, a)
        cost = float(np.dot(Ms, per_sample_cost)) if per_sample_cost is not None else NAN
        rows.append(ResultRow(
            experiment, "L-MVR", str(rep), tuple(Ms), spec.N,
            est.E, _err(est.E, truth[0]), est.dE / a, 0.0, est.dE,
            est.V, _err(est.V, truth[1]), est.dV / a, 0.0, est.dV,
            est.predicted_bias, a, float(Ms[0]), NAN, cost, NAN,
        ))
    return rows


def fixed_plan(N: Sequence[int], cache: TestSetCache) -> LevelPlan:
    cost, c = equivalent_cost(N, cache)
    return LevelPlan(LevelSpec(tuple(N)), optimal_weights(c), cost, c, cache.t_h, np.array([cache.t(n) for n in N]))


def select_levels_for(cfg: ExperimentConfig, cache: TestSetCache) -> LevelPlan:
    """Configured levels when mvr.N is set, otherwise the cheapest plan over mvr.L_range."""
    if cfg.mvr.N is not None:
        return fixed_plan(cfg.mvr.N, cache)
    return min((r["plan"] for r in compare_level_counts(cfg.mvr.L_range, cache)), key=lambda p: p.cost)


def adaptive_replication(plan: LevelPlan, channels: Channels, domain, seed: int, rep: int, eps: float, a: float,
                         truth=(NAN, NAN), min_samples: int = 30, safety: float = 1.1, growth_cap: float = 2.0,
                         experiment: str = "mvr-adaptive") -> list[ResultRow]:
    streams = [SampleStream(seed, l, rep) for l in range(plan.L + 1)]
    res = adaptive_run(plan, channels, domain, streams, eps, a, min_samples, safety, growth_cap)
    est = res.estimate
    return [ResultRow(
        experiment, "L-MVR", str(rep), res.M, plan.spec.N,
        est.E, _err(est.E, truth[0]), est.dE / a, 0.0, est.dE,
        est.V, _err(est.V, truth[1]), est.dV / a, 0.0, est.dV,
        est.predicted_bias, a, float(res.M[0]), plan.t_h, res.T, res.speedup,
    )]


def selection_table(cache: TestSetCache, L_range: Sequence[int]) -> list[dict]:
    """(L, N, w, Ĉ_L, Ĉ_L/Ĉ_best, predicted speedup) for each level count."""
    V_h = mc_mean_var(cache.s_h)[1]
    rows = []
    for r in compare_level_counts(L_range, cache):
        rows.append({"L": r["L"], "N": r["N"], "w": tuple(float(x) for x in r["w"]), "C_hat": r["C_hat"],
                     "C_hat_rel": r["C_hat_rel"], "predicted_speedup": r["plan"].predicted_speedup(V_h)})
    return rows


def cost_curve(cache: TestSetCache) -> list[dict]:
    """Ĉ_1 over I_1 = 1..N_max with KKT weights (the 1-MVR cost-vs-I curve)."""
    V_h = mc_mean_var(cache.s_h)[1]
    rows = []
    for I in range(1, cache.N_max + 1):
        cost, c = equivalent_cost((I,), cache)
        rows.append({"I1": I, "C_hat": cost, "C0": float(c[0]), "C1": float(c[1]),
                     "V_level0": mc_mean_var(cache.s_h - cache.rb(I))[1], "speedup": cache.t_h * V_h / cost})
    return rows


def test_cache(problem: Problem, channels: Channels, t=None) -> TestSetCache:
    return build_test_cache(channels, test_set(problem.cfg, problem.domain), channels.model.N_max, t)


def oracle_table(problem: Problem) -> list[dict]:
    if not problem.cfg.is_benchmark():
        raise ConfigError("oracle values exist only for the heat benchmark configuration")
    dom, f = problem.domain, problem.cfg.model.source
    E, V = analytic_moments_1d(dom, f)
    probes = {"ones": np.ones(dom.Q), "lower": dom.lower, "upper": dom.upper,
              "midpoint": 0.5 * (dom.lower + dom.upper)}
    rows = [{"quantity": "E[s]", "value": E}, {"quantity": "V[s]", "value": V}]
    for name, y in probes.items():
        rows.append({"quantity": f"s({name})", "value": float(analytic_output_1d(y, f))})
    return rows

"""Output channels (full model and RB surrogates) with per-sample timings."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hdg import AffineSystem, outputs_batch
from .mvr import TestSetCache
from .rb import RBModel
from .stochastic import analytic_output_1d


CHUNK = 100_000


@dataclass
class Channels:
    """s_h and s_N evaluators over rows of parameter vectors.

    ``full_fn`` supplies the full-model values (HDG solve or a closed-form
    stand-in); ``full_single`` is the single-sample path used for timing the
    full model, so an analytic stand-in still carries the HDG cost.
    """

    full_fn: Callable[[np.ndarray], np.ndarray]
    model: RBModel | None = None
    full_single: Callable[[np.ndarray], object] | None = None
    full_calls: int = 0

    def full(self, ys) -> np.ndarray:
        ys = np.atleast_2d(ys)
        self.full_calls += ys.shape[0]
        return np.asarray(self.full_fn(ys), dtype=float)

    def rb(self, N: int, ys) -> np.ndarray:
        if self.model is None:
            raise ValueError("no RB model attached to these channels")
        ys = np.atleast_2d(ys)
        return np.concatenate([np.asarray(self.model.outputs(N, ys[i:i + CHUNK]), dtype=float)
                               for i in range(0, ys.shape[0], CHUNK)])

    def rb_with_bound(self, N: int, ys):
        ob = self.model.output_bound(N, np.atleast_2d(ys))
        return np.asarray(ob.s_N, dtype=float), np.asarray(ob.delta_s, dtype=float)


def hdg_channels(sys: AffineSystem, model: RBModel | None = None) -> Channels:
    return Channels(lambda ys: outputs_batch(sys, ys), model, lambda y: outputs_batch(sys, y[None, :]))


def analytic_channels(model: RBModel | None = None, source: float = 1.0,
                      timing_system: AffineSystem | None = None) -> Channels:
    """Closed-form s_h values; timing uses ``timing_system`` when supplied."""
    single = None if timing_system is None else (lambda y: outputs_batch(timing_system, y[None, :]))
    return Channels(lambda ys: analytic_output_1d(ys, source), model, single)


def median_time(fn: Callable[[], object], repeats: int = 5, warmup: int = 2, inner: int = 20) -> float:
    """Median over ``repeats`` warm measurements of the mean time of ``inner`` back-to-back calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        times.append((time.perf_counter() - t0) / inner)
    return statistics.median(times)


def measure_timings(channels: Channels, y: np.ndarray, N_max: int, repeats: int = 5) -> tuple[float, np.ndarray]:
    """(t_h, t_N for N = 1..N_max): median single-sample evaluation times."""
    y = np.asarray(y, dtype=float)
    single = channels.full_single or (lambda v: channels.full_fn(v[None, :]))
    t_h = median_time(lambda: single(y), repeats)
    t_N = np.array([median_time(lambda N=N: channels.model.output_single(N, y), repeats) for N in range(1, N_max + 1)])
    return t_h, t_N


def build_test_cache(channels: Channels, ys: np.ndarray, N_max: int | None = None,
                     timings: tuple[float, np.ndarray] | None = None) -> TestSetCache:
    """Evaluate s_h and every s_N on the test set and attach timings."""
    N_max = N_max or channels.model.N_max
    s_h = channels.full(ys)
    s_N = np.stack([channels.rb(N, ys) for N in range(1, N_max + 1)])
    if timings is None:
        timings = measure_timings(channels, ys[0], N_max)
    t_h, t_N = timings
    return TestSetCache(s_h, s_N, float(t_h), np.asarray(t_N, dtype=float)[:N_max])

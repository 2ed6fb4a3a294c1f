"""Experiment configuration: YAML file with model / discretization / rb / mc / mvr / output blocks.

Grammar (every key optional, defaults shown by :class:`ExperimentConfig`)::

    model:
      Q: 10
      bounds: [0.1, 1.0]          # one interval for all coordinates, or a list of Q intervals
      field: piecewise-constant   # or "tabulated" with breaks / mean_values / mode_values
      mean: 0.0
      source: 1.0
      mode: real                  # "complex" switches to the Helmholtz surrogate
      wavenumber: 0.0             # complex mode: rho = -k^2, Robin nu = -ik at x = 1
      rho: 0.0
      left:  {kind: dirichlet}
      right: {kind: neumann, g: 0.0}
    discretization: {elements: 10, p: 2, tau: 1.0}
    rb: {N_max: 10, training_size: 1000, seed: 1, compliant: true, model_file: rb_model.txt}
    mc: {a: 1.96, eps_tol: 1.0e-3, seed: 1, replications: 100, M_schedule: [100, 1000, 10000],
         full_model: analytic, N: 9}
    mvr: {N: [5], L_range: [1, 2, 3], M0_fraction: 0.1, test_size: 1000, min_samples: 30,
          safety: 1.1, growth_cap: 2.0, adaptive: false, timings: null}
    output: {dir: out, formats: [csv]}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Invalid configuration; the message carries the offending line when known."""


@dataclass
class BoundarySpec:
    kind: str = "dirichlet"
    nu: complex = 0.0
    g: complex = 0.0


@dataclass
class ModelConfig:
    Q: int = 10
    bounds: Any = (0.1, 1.0)
    field: str = "piecewise-constant"
    mean: float = 0.0
    breaks: list | None = None
    mean_values: list | None = None
    mode_values: list | None = None
    source: float = 1.0
    mode: str = "real"
    wavenumber: float = 0.0
    rho: float = 0.0
    left: BoundarySpec = dataclasses.field(default_factory=BoundarySpec)
    right: BoundarySpec = dataclasses.field(default_factory=lambda: BoundarySpec("neumann"))
    output_real: bool = True


@dataclass
class DiscretizationConfig:
    elements: int = 10
    p: int = 2
    tau: float = 1.0


@dataclass
class RBConfig:
    N_max: int = 10
    training_size: int = 1000
    seed: int | None = 1
    compliant: bool = True
    model_file: str = "rb_model.txt"


@dataclass
class MCConfig:
    a: float = 1.96
    eps_tol: float = 1e-3
    seed: int | None = 1
    replications: int = 100
    M_schedule: list = field(default_factory=lambda: [100, 1000, 10000])
    full_model: str = "analytic"
    N: int = 9


@dataclass
class Timings:
    t_h: float
    t_N: list


@dataclass
class MVRConfig:
    N: list | None = field(default_factory=lambda: [5])
    L_range: list = field(default_factory=lambda: [1, 2, 3])
    M0_fraction: float = 0.1
    test_size: int = 1000
    min_samples: int = 30
    safety: float = 1.1
    growth_cap: float = 2.0
    adaptive: bool = False
    timings: Timings | None = None


@dataclass
class OutputConfig:
    dir: str = "out"
    formats: list = field(default_factory=lambda: ["csv"])


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    rb: RBConfig = field(default_factory=RBConfig)
    mc: MCConfig = field(default_factory=MCConfig)
    mvr: MVRConfig = field(default_factory=MVRConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source_path: str | None = None

    def validate(self) -> "ExperimentConfig":
        m, d, r, c, v = self.model, self.discretization, self.rb, self.mc, self.mvr
        _require(m.Q >= 1, "model.Q must be >= 1")
        _require(m.mode in ("real", "complex"), "model.mode must be 'real' or 'complex'")
        _require(m.field in ("piecewise-constant", "tabulated"), "model.field must be 'piecewise-constant' or 'tabulated'")
        _require(len(self.interval_list()) == m.Q, "model.bounds needs one interval or Q intervals")
        _require(all(lo <= hi for lo, hi in self.interval_list()), "model.bounds intervals need lo <= hi")
        for name, bc in (("left", m.left), ("right", m.right)):
            _require(bc.kind in ("dirichlet", "neumann", "robin"), f"model.{name}.kind must be dirichlet, neumann or robin")
        _require(not (m.mode == "complex" and r.compliant), "rb.compliant must be false in complex mode")
        _require(d.elements >= 1 and d.p >= 0, "discretization needs elements >= 1 and p >= 0")
        _require(d.tau > 0, "discretization.tau must be positive")
        _require(r.seed is not None, "rb.seed is required")
        _require(c.seed is not None, "mc.seed is required")
        for s in (r.seed, c.seed):
            _require(0 <= int(s) < 2**64, "seeds must be unsigned 64-bit integers")
        _require(r.N_max >= 1 and r.training_size >= r.N_max, "rb needs 1 <= N_max <= training_size")
        _require(c.eps_tol > 0, "mc.eps_tol must be positive")
        _require(c.a > 0, "mc.a must be positive")
        _require(c.replications >= 1, "mc.replications must be >= 1")
        _require(all(int(M) >= 2 for M in c.M_schedule), "mc.M_schedule entries must be >= 2")
        _require(c.full_model in ("hdg", "analytic"), "mc.full_model must be 'hdg' or 'analytic'")
        _require(1 <= c.N <= r.N_max, "mc.N must lie in [1, rb.N_max]")
        _require(all(1 <= L < r.N_max for L in v.L_range), "mvr.L_range entries need 1 <= L < rb.N_max")
        if v.N is not None:
            _require(len(v.N) >= 1 and all(1 <= n <= r.N_max for n in v.N), "mvr.N entries must lie in [1, rb.N_max]")
            _require(all(a > b for a, b in zip(v.N, v.N[1:])), "mvr.N must be strictly decreasing")
        _require(0 < v.M0_fraction <= 1, "mvr.M0_fraction must lie in (0, 1]")
        _require(v.test_size >= 2 and v.min_samples >= 2, "mvr.test_size and mvr.min_samples must be >= 2")
        _require(v.safety >= 1 and v.growth_cap > 1, "mvr.safety >= 1 and mvr.growth_cap > 1 required")
        if v.timings is not None:
            _require(v.timings.t_h > 0 and len(v.timings.t_N) >= r.N_max and min(v.timings.t_N) > 0,
                     "mvr.timings needs t_h > 0 and N_max positive t_N values")
        if c.full_model == "analytic":
            _require(self.is_benchmark(), "mc.full_model 'analytic' needs the heat benchmark model")
        return self

    def interval_list(self) -> list[tuple[float, float]]:
        b = self.model.bounds
        if len(b) == 2 and all(isinstance(x, (int, float)) for x in b):
            return [(float(b[0]), float(b[1]))] * self.model.Q
        return [(float(lo), float(hi)) for lo, hi in b]

    def is_benchmark(self) -> bool:
        """Heat benchmark: piecewise-constant κ = y on Q cells, f constant, u(0) = 0, κu'(1) = 0."""
        m = self.model
        return (m.mode == "real" and m.field == "piecewise-constant" and m.mean == 0 and m.rho == 0
                and m.left.kind == "dirichlet" and m.right.kind == "neumann" and m.right.g == 0
                and all(lo > 0 for lo, _ in self.interval_list()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


_BLOCKS = {
    "model": ModelConfig, "discretization": DiscretizationConfig, "rb": RBConfig,
    "mc": MCConfig, "mvr": MVRConfig, "output": OutputConfig,
}


def _key_lines(text: str) -> dict[tuple[str, ...], int]:
    """Map key paths to 1-based source lines using the YAML node tree."""
    out: dict[tuple[str, ...], int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (str(k.value),)
                out[p] = k.start_mark.line + 1
                walk(v, p)

    try:
        walk(yaml.compose(text), ())
    except yaml.YAMLError:
        pass
    return out


def _build(cls, data, path: tuple[str, ...], lines):
    where = lambda p: f"line {lines[p]}: " if p in lines else ""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where(path)}{'.'.join(path)} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        p = path + (str(key),)
        if key not in names:
            raise ConfigError(f"{where(p)}unknown key {'.'.join(p)}")
        if key in ("left", "right"):
            val = _build(BoundarySpec, val, p, lines)
        elif key == "timings" and val is not None:
            val = _build(Timings, val, p, lines)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where(path)}{exc}") from None


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML syntax error: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a mapping")
    lines = _key_lines(text)
    blocks = {}
    for name, val in raw.items():
        if name not in _BLOCKS:
            line = lines.get((str(name),))
            raise ConfigError(f"{f'line {line}: ' if line else ''}unknown block {name!r}")
        blocks[name] = _build(_BLOCKS[name], val, (name,), lines)
    cfg = ExperimentConfig(**blocks, source_path=source)
    try:
        return cfg.validate()
    except ConfigError as exc:
        msg = str(exc)
        key = tuple(msg.split()[0].split("."))
        raise ConfigError(f"line {lines[key]}: {msg}" if key in lines else msg) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))

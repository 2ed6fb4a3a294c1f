"""Command-line driver: ``mvrhdg {build-rb,run,select,oracle}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from functools import partial
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .hdg import NonsolvableParameter
from .mvr import AdaptiveDivergence
from .mvr import ConfigurationError as PlanError
from .rb import ReducedSolveError, load_model, save_model
from .results import format_rows, format_table, summarize

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
log = logging.getLogger("mvrhdg")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment configuration (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="override rb.seed and mc.seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory (default: output.dir)")
    common.add_argument("--deterministic", action="store_true",
                        help="single worker, configured timings only: byte-identical outputs")
    common.add_argument("--threads", type=int, default=1, help="replication workers")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mvrhdg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("build-rb", parents=[common], help="offline greedy RB construction and convergence table")
    run = sub.add_parser("run", parents=[common], help="replicated estimator runs")
    run.add_argument("--method", choices=["mc-hdg", "mc-rb", "mvr"], required=True)
    sub.add_parser("select", parents=[common], help="a priori level-count comparison table")
    sub.add_parser("oracle", parents=[common], help="closed-form benchmark reference values")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.rb.seed = cfg.mc.seed = args.seed
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def _outdir(args, cfg) -> Path:
    out = args.out or Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_path(cfg, out: Path) -> Path:
    p = Path(cfg.rb.model_file)
    return p if p.is_absolute() else out / p


def cmd_build_rb(args, cfg, out: Path) -> int:
    problem = ex.build_problem(cfg)
    model, report, table = ex.build_rb(problem)
    path = _model_path(cfg, out)
    save_model(model, path)
    (out / "greedy.csv").write_text(format_table(table, "# mvrhdg greedy v1"))
    print(f"RB model with N = {model.N_max} written to {path}; skipped {len(report.skipped)} dependent snapshots")
    for row in table:
        print(f"N={row['N']:3d}  max Δs={row['max_delta_s']:.3e}  avg Δs={row['avg_delta_s']:.3e}  "
              f"max err={row['max_error']:.3e}  avg err={row['avg_error']:.3e}")
    return EXIT_OK


def _load(cfg, out):
    path = _model_path(cfg, out)
    if not path.exists():
        raise ConfigError(f"RB model file {path} not found; run build-rb first")
    return load_model(path)


def cmd_run(args, cfg, out: Path) -> int:
    problem = ex.build_problem(cfg)
    mc, mvr = cfg.mc, cfg.mvr
    seed, truth, H = int(mc.seed), problem.truth, mc.replications
    threads = 1 if args.deterministic else args.threads
    if args.method == "mc-hdg":
        ch = ex.make_channels(problem, None)
        t_h = np.nan if args.deterministic and mvr.timings is None else _t_h(problem, ch)
        fn = partial(ex.mc_hdg_replication, ch, problem.domain, seed, schedule=mc.M_schedule, a=mc.a,
                     truth=truth, t_h=t_h)
    else:
        ch = ex.make_channels(problem, _load(cfg, out))
        if args.method == "mc-rb":
            fn = partial(ex.mc_rb_replication, ch, problem.domain, seed, schedule=mc.M_schedule, N=mc.N,
                         a=mc.a, truth=truth)
        elif mvr.adaptive:
            t = ex.timings(problem, ch, args.deterministic)
            cache = ex.test_cache(problem, ch, t)
            plan = ex.select_levels_for(cfg, cache)
            fn = partial(ex.adaptive_replication, plan, ch, problem.domain, seed, eps=mc.eps_tol, a=mc.a,
                         truth=truth, min_samples=mvr.min_samples, safety=mvr.safety, growth_cap=mvr.growth_cap)
        else:
            if mvr.N is None:
                raise ConfigError("fixed-size mvr runs need mvr.N (or set mvr.adaptive: true)")
            fn = partial(ex.mvr_replication, ch, problem.domain, seed, schedule=mc.M_schedule, N=mvr.N,
                         M0_fraction=mvr.M0_fraction, a=mc.a, truth=truth)
    rows = summarize(ex.replicate(fn, H, threads))
    path = out / f"results_{args.method}.csv"
    path.write_text(format_rows(rows))
    for r in rows:
        if r.replication == "mean":
            print(f"{r.method:7s} N={r.N} M={tuple(round(m) for m in r.M)}  E={r.E:.6f}  |err|={r.E_err:.3e}  "
                  f"bound={r.E_bound:.3e}  V={r.V:.5f}  |err|={r.V_err:.3e}")
    print(f"wrote {path}")
    return EXIT_OK


def _t_h(problem, ch):
    t = problem.cfg.mvr.timings
    if t is not None:
        return float(t.t_h)
    from .channels import median_time
    y = 0.5 * (problem.domain.lower + problem.domain.upper)
    single = ch.full_single or (lambda v: ch.full_fn(v[None, :]))
    return median_time(lambda: single(y))


def cmd_select(args, cfg, out: Path) -> int:
    problem = ex.build_problem(cfg)
    ch = ex.make_channels(problem, _load(cfg, out))
    cache = ex.test_cache(problem, ch, ex.timings(problem, ch, args.deterministic))
    table = ex.selection_table(cache, cfg.mvr.L_range)
    (out / "select.csv").write_text(format_table(table, "# mvrhdg level-selection v1"))
    (out / "cost_curve.csv").write_text(format_table(ex.cost_curve(cache), "# mvrhdg cost-curve v1"))
    for r in table:
        print(f"L={r['L']}  N={r['N']}  w={np.round(r['w'], 4).tolist()}  Ĉ={r['C_hat']:.4e}  "
              f"Ĉ/Ĉbest={r['C_hat_rel']:.3f}  predicted speedup={r['predicted_speedup']:.1f}")
    return EXIT_OK


def cmd_oracle(args, cfg, out: Path) -> int:
    table = ex.oracle_table(ex.build_problem(cfg))
    (out / "oracle.csv").write_text(format_table(table, "# mvrhdg oracle v1"))
    for r in table:
        print(f"{r['quantity']:14s} {r['value']:.17g}")
    return EXIT_OK


COMMANDS = {"build-rb": cmd_build_rb, "run": cmd_run, "select": cmd_select, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = _outdir(args, cfg)
        return COMMANDS[args.command](args, cfg, out)
    except (ConfigError, PlanError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonsolvableParameter, ReducedSolveError, AdaptiveDivergence, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

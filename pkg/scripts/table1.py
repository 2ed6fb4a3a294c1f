"""Averaged expectation errors of MC-HDG, MC-RB and 1-MVR over a sample-size schedule.

The full model is the closed-form output (identical to the HDG output to round-off on the
benchmark mesh), so large schedules finish in minutes.
"""

import argparse
from functools import partial
from pathlib import Path

from mvrhdg import experiments as ex
from mvrhdg.config import load_config
from mvrhdg.results import format_rows, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", type=Path, default=Path(__file__).parents[1] / "configs" / "benchmark.yaml")
    p.add_argument("--schedule", type=int, nargs="+", default=[100, 1000, 10000, 100000])
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--out", type=Path, default=Path("table1.csv"))
    args = p.parse_args()

    cfg = load_config(args.config)
    problem = ex.build_problem(cfg)
    model, _, _ = ex.build_rb(problem)
    ch = ex.make_channels(problem, model)
    seed, a, truth = int(cfg.mc.seed), cfg.mc.a, problem.truth
    runs = [
        partial(ex.mc_hdg_replication, ch, problem.domain, seed, schedule=args.schedule, a=a, truth=truth),
        partial(ex.mc_rb_replication, ch, problem.domain, seed, schedule=args.schedule, N=cfg.mc.N, a=a,
                truth=truth),
        partial(ex.mvr_replication, ch, problem.domain, seed, schedule=args.schedule, N=cfg.mvr.N,
                M0_fraction=cfg.mvr.M0_fraction, a=a, truth=truth),
    ]
    rows = []
    for fn in runs:
        rows += summarize(ex.replicate(fn, args.replications))
    args.out.write_text(format_rows(rows))
    print(f"{'method':8} {'N':>8} {'M':>16} {'E error':>10} {'E bound':>10} {'V error':>10}")
    for r in rows:
        if r.replication == "mean":
            M = "/".join(str(round(m)) for m in r.M)
            print(f"{r.method:8} {str(r.N):>8} {M:>16} {r.E_err:10.2e} {r.E_bound:10.2e} {r.V_err:10.2e}")


if __name__ == "__main__":
    main()

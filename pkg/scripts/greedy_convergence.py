"""Error and bound decay of the greedy RB model versus N on the test set (data for an error-vs-N plot)."""

import argparse
from pathlib import Path

from mvrhdg import experiments as ex
from mvrhdg.config import load_config
from mvrhdg.results import format_table


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", type=Path, default=Path(__file__).parents[1] / "configs" / "benchmark.yaml")
    p.add_argument("--out", type=Path, default=Path("greedy_convergence.csv"))
    args = p.parse_args()

    problem = ex.build_problem(load_config(args.config))
    _, report, table = ex.build_rb(problem)
    args.out.write_text(format_table(table, "# mvrhdg greedy v1"))
    print(f"selected training indices: {report.selected}")
    print(f"{'N':>3} {'avg error':>11} {'max error':>11} {'avg Δs':>11} {'max Δs':>11} violations")
    for r in table:
        print(f"{r['N']:3d} {r['avg_error']:11.3e} {r['max_error']:11.3e} {r['avg_delta_s']:11.3e} "
              f"{r['max_delta_s']:11.3e} {r['violations']:10d}")


if __name__ == "__main__":
    main()

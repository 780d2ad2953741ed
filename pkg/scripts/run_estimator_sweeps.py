#!/usr/bin/env python3
"""Run the six estimator-quality sweeps and write one CSV per axis.

Each sweep varies a single simulation parameter around the baseline
setting (alpha=0.9, beta=0.5, gamma=0.1, tau_pos=0.1, t=0.5, m=1000,
n=64) and records MSE / mean / spread of the four estimators against
the supervised oracle.  Outputs land in --out-dir as sweep_<axis>.csv
plus a plot-ready long-format twin.
"""

import argparse
import os

from bcl.harness import SweepGrid, export_long_csv, export_report, run_mse_sweep
from bcl.simulate import default_config

AXES = {
    "alpha": (0.6, 0.7, 0.8, 0.9, 1.0),
    "n": (16, 32, 64, 128, 256),
    "tau_pos": (0.05, 0.1, 0.2, 0.3, 0.5),
    "gamma": (0.0, 0.1, 0.3, 0.6, 1.0),
    "t": (0.25, 0.5, 1.0, 2.0),
    "m": (100, 300, 1000, 3000),
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="sweep_results")
    parser.add_argument("--reps", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=4)
    args = parser.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    base = default_config(seed=args.seed)
    for axis, values in AXES.items():
        grid = SweepGrid(axis=axis, values=values, base=base,
                         repetitions=args.reps, seed=args.seed)
        report = run_mse_sweep(grid, threads=args.threads)
        out = os.path.join(args.out_dir, f"sweep_{axis}.csv")
        export_report(report, "csv", out)
        export_long_csv(report, os.path.join(args.out_dir, f"sweep_{axis}_long.csv"))
        best = min(report.rows, key=lambda r: r.mse["bcl"])
        print(f"{axis}: wrote {out} (lowest bcl MSE {best.mse['bcl']:.3e} "
              f"at {axis}={best.axis_value:g})")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Run the full results grid and print the aggregated table.

Library-level equivalent of `lorenzcast reproduce`; writes the same
runs.csv / table.csv artifacts.

    python scripts/results_table.py --out runs/repro --workers 2
"""

import argparse
import csv
import os

from lorenzcast import cli


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/repro")
    parser.add_argument("--seeds", default="1234,1235,42")
    parser.add_argument("--workers", type=int,
                        default=min(4, os.cpu_count() or 1))
    args = parser.parse_args()

    code = cli.main(["reproduce", "--out", args.out, "--seeds", args.seeds,
                     "--workers", str(args.workers)])
    if code != 0:
        raise SystemExit(code)

    with open(os.path.join(args.out, "table.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    width = max(len(r["cell"]) for r in rows)
    print(f"\n{'cell':{width}s}  series  rmse mean (std)")
    for row in rows:
        std = f" ({float(row['rmse_std']):.5f})" if row["rmse_std"] else ""
        mean = f"{float(row['rmse_mean']):.5f}" if row["rmse_mean"] else "failed"
        print(f"{row['cell']:{width}s}  {row['series']:6s}  {mean}{std}")


if __name__ == "__main__":
    main()

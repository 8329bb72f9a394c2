"""Run every config in configs/ and write a one-line-per-check summary CSV."""

import argparse
import csv
import sys
import time
from pathlib import Path

from dualpath.cli import load_config, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", default="configs")
    ap.add_argument("--out", default="runs")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="scenario names to run (default: all)")
    args = ap.parse_args()

    rows = []
    for path in sorted(Path(args.configs).glob("*.json")):
        cfg = load_config(path)
        if args.only and cfg.scenario not in args.only:
            continue
        t0 = time.perf_counter()
        rep = run_scenario(cfg, Path(args.out) / path.stem, args.threads)
        dt = time.perf_counter() - t0
        for c in rep.checks:
            rows.append([cfg.scenario, c["name"], c["value"], c["comparison"], c["threshold"], c["passed"]])
        print(f"{'PASS' if rep.passed else 'FAIL'} {cfg.scenario:22s} {dt:7.1f}s", flush=True)

    Path(args.out).mkdir(parents=True, exist_ok=True)
    with open(Path(args.out) / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scenario", "check", "value", "comparison", "threshold", "passed"])
        w.writerows(rows)
    return 0 if all(r[-1] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())

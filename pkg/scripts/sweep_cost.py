"""Charging cost against fleet size for every method (one row per run, plus means).

    python3 scripts/sweep_cost.py --evs 100,200,300,400 --reps 20 --out out/sweep_cost.csv
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from evsched.cli import run_method
from evsched.core import generate_scenario

METHODS = ("csa", "dcsa", "cost-min", "convenience-max")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--evs", default="100,200,300,400")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--out", default="out/sweep_cost.csv")
    args = p.parse_args(argv)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    sizes = [int(x) for x in args.evs.split(",")]
    methods = args.methods.split(",")
    rows = []
    for n in sizes:
        for rep in range(args.reps):
            sc = generate_scenario(args.seed + rep, n)
            for m in methods:
                _, metrics, _ = run_method(sc, m, "seasonal-naive", 1e-4)
                rows.append((m, n, rep, metrics.cost, metrics.mean_charging_time_h, metrics.n_missed))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "n_evs", "rep", "cost", "mean_charging_time_h", "n_missed"])
        w.writerows(rows)
    for n in sizes:
        means = {m: np.mean([r[3] for r in rows if r[0] == m and r[1] == n]) for m in methods}
        top = max(means.values())
        print(f"N={n:4d}  " + "  ".join(f"{m} {v:8.3f} ({v / top:.3f})" for m, v in means.items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())

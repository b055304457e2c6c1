"""Side-by-side metrics for the four methods on one scenario, raw and normalized.

    python3 scripts/method_table.py --evs 200 --seed 7 --out out/method_table.csv
"""

import argparse
import sys
from pathlib import Path

from evsched.cli import run_method
from evsched.core import generate_scenario
from evsched.metrics import compare_methods, comparison_csv

METHODS = ("csa", "dcsa", "cost-min", "convenience-max")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--evs", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="out/method_table.csv")
    args = p.parse_args(argv)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    sc = generate_scenario(args.seed, args.evs)
    results = {m: run_method(sc, m, "seasonal-naive", 1e-4)[1] for m in METHODS}
    comp = compare_methods(results)
    text = comparison_csv(comp)
    with open(args.out, "w") as fh:
        fh.write(text)
    for label, vals in comp.rows():
        print(f"{label:16s} " + "  ".join(f"{k} {v[0]:.4g} ({v[1]:.3f})" for k, v in vals.items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())

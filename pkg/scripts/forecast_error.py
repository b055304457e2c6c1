"""MAPE of the built-in forecasters on the synthetic load history.

    python3 scripts/forecast_error.py --days 28 --seed 3
"""

import argparse
import sys

import numpy as np

from evsched.core import TimeGrid
from evsched.forecast import forecast, mape, synthetic_load_history

STRATEGIES = ("seasonal-naive", "previous-days-average")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--days", type=int, default=28)
    p.add_argument("--window", type=int, default=14, help="days of history behind each forecast")
    p.add_argument("--seed", type=int, default=3)
    args = p.parse_args(argv)
    grid = TimeGrid()
    hist = synthetic_load_history(args.days, grid, np.random.default_rng(args.seed))
    for name in STRATEGIES:
        errs = [mape(forecast(hist[d - args.window:d], name, grid.slots_per_day), hist[d])
                for d in range(args.window, args.days)]
        print(f"{name:22s} MAPE {100 * np.mean(errs):.2f}% over {len(errs)} days")
    return 0


if __name__ == "__main__":
    sys.exit(main())

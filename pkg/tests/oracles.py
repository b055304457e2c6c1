"""Independent reference implementations used by the tests.

Nothing here imports the solver code paths it checks: the brute-force
searches enumerate discretized schedules directly, and the greedy and
flat-level references are written the naive way.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def compositions(total: int, slots: int, cap: int):
    """All vectors of ``slots`` integers in [0, cap] summing to ``total``."""
    if slots == 0:
        if total == 0:
            yield ()
        return
    for first in range(min(cap, total) + 1):
        for rest in compositions(total - first, slots - 1, cap):
            yield (first,) + rest


def ev_schedules(demand_units: int, avail_mask, cap_units: int) -> np.ndarray:
    """Every per-slot unit vector for one EV (zeros where it is absent)."""
    idx = [j for j, a in enumerate(avail_mask) if a]
    rows = []
    for comp in compositions(demand_units, len(idx), cap_units):
        v = [0] * len(avail_mask)
        for j, x in zip(idx, comp):
            v[j] = x
        rows.append(v)
    return np.array(rows, dtype=np.int64).reshape(-1, len(avail_mask))


def quad_cost(z, b, k0, k1):
    """Per-slot cost with z and b already in energy units."""
    return sum(k0 * (zz - bb) + 0.5 * k1 * (zz * zz - bb * bb) for zz, bb in zip(z, b))


def brute_p1(base_kwh, demand_units, avail, unit_kwh, cap_units, k0=1e-4, k1=1.2e-4):
    """Cheapest discretized schedule; returns (cost, aggregate units per slot).

    Aggregates are deduplicated after each EV, so the search is over distinct
    total-load vectors rather than over schedule tuples.
    """
    w = len(base_kwh)
    aggregates = {tuple([0] * w)}
    for d, mask in zip(demand_units, avail):
        options = [tuple(r) for r in ev_schedules(d, mask, cap_units)]
        if not options:
            return math.inf, None
        aggregates = {tuple(a + o for a, o in zip(agg, opt)) for agg in aggregates for opt in options}
    best, arg = math.inf, None
    for agg in aggregates:
        z = [b + unit_kwh * a for b, a in zip(base_kwh, agg)]
        c = quad_cost(z, base_kwh, k0, k1)
        if c < best:
            best, arg = c, agg
    return best, arg


def all_schedules(demand_units, avail, cap_units):
    """Cartesian product of per-EV discretized schedules (tiny instances only)."""
    per_ev = [ev_schedules(d, mask, cap_units) for d, mask in zip(demand_units, avail)]
    for combo in itertools.product(*[range(len(p)) for p in per_ev]):
        yield np.array([per_ev[i][k] for i, k in enumerate(combo)]).reshape(len(per_ev), -1)


def j2_reference(rates_kw, arrival, deadline, soc0, target, cap_kwh, p_max, h, horizon):
    """Convenience summed over present EVs: 1/(w*·w) while charging, 1 once done and still parked."""
    total = 0.0
    for i in range(len(arrival)):
        soc = soc0[i]
        for t in range(arrival[i], deadline[i]):
            if soc >= target[i] - 1e-9:
                total += 1.0
            else:
                w_star = (target[i] - soc) * cap_kwh[i] / (p_max[i] * h)
                total += 1.0 / (w_star * (deadline[i] - t))
            soc += rates_kw[i][t] * h / cap_kwh[i]
    return total


def greedy_reference(headroom, u, cap, ids=None):
    """Plain greedy: sort by (-u, id), hand out min(remaining, cap)."""
    n = len(u)
    ids = list(range(n)) if ids is None else list(ids)
    order = sorted(range(n), key=lambda i: (-u[i], ids[i]))
    out = [0.0] * n
    left = headroom
    for i in order:
        give = min(left, cap[i])
        out[i] = give
        left -= give
        if left <= 0:
            break
    return out


def brute_slot_allocation(headroom_units, u, cap_units):
    """Max of sum(u_i * x_i) over integer allocations summing to min(headroom, sum cap)."""
    total = min(headroom_units, sum(cap_units))
    best = -math.inf
    for x in itertools.product(*[range(c + 1) for c in cap_units]):
        if sum(x) == total:
            best = max(best, sum(ui * xi for ui, xi in zip(u, x)))
    return best


def flat_reference(demand, base, iters=200):
    """Level c with sum(max(c - base, 0)) == demand, by plain bisection."""
    base = list(base)
    lo, hi = min(base), max(base) + demand
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if sum(max(mid - b, 0.0) for b in base) < demand:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    return [max(c, b) for b in base]


def pareto_points(base_kwh, demand_units, avail, unit_kwh, cap_units, ev_j2, k0=1e-4, k1=1.2e-4):
    """(J1, best J2) for every reachable aggregate load vector.

    J2 is a sum of per-EV terms, so among schedules sharing an aggregate only
    the one with the largest J2 can dominate anything; ``ev_j2(i, units_row)``
    scores one EV's unit vector. Keeping that maximum per aggregate makes the
    dominance check exact without walking the full Cartesian product.
    """
    w = len(base_kwh)
    best = {tuple([0] * w): 0.0}
    for i, (d, mask) in enumerate(zip(demand_units, avail)):
        options = [(tuple(r), ev_j2(i, r)) for r in ev_schedules(d, mask, cap_units)]
        nxt = {}
        for agg, j2 in best.items():
            for opt, s in options:
                key = tuple(a + o for a, o in zip(agg, opt))
                v = j2 + s
                if v > nxt.get(key, -math.inf):
                    nxt[key] = v
        best = nxt
    out = []
    for agg, j2 in best.items():
        z = [b + unit_kwh * a for b, a in zip(base_kwh, agg)]
        out.append((quad_cost(z, base_kwh, k0, k1), j2))
    return np.array(out)

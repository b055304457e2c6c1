"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
numbers before asserting, so ``pytest tests/test_acceptance.py`` shows the
whole table even when some criteria fail. Running this file as a script
prints the same lines without pytest.
"""

from __future__ import annotations

import functools
import math
import sys
import time

import numpy as np
import pytest

from evsched.centralized import resolve_base_forecast, run_csa, ucm
from evsched.core import EvRequest, FleetState, GeneratorConfig, Scenario, TimeGrid, generate_scenario
from evsched.distributed import (MessageBus, MessageLedger, SaSummary, StationCandidates, dcsa_step, ducm, lccm,
                                 run_csa_ledger)
from evsched.forecast import mape
from evsched.objectives import CostModel, convenience, slot_costs
from evsched.qp import P1Instance, solve_p1
import montecarlo
from oracles import brute_p1, brute_slot_allocation, pareto_points

LINES: list = []


def report(number: int, ok: bool, text: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {text}"
    LINES.append(line)
    print(line, flush=True)


@functools.lru_cache(maxsize=None)
def monte_carlo():
    t0 = time.perf_counter()
    res = montecarlo.run((100, 200), reps=100)
    return res, time.perf_counter() - t0


def mean(runs, attr):
    return float(np.mean([getattr(m, attr) for m, _ in runs]))


# ---------------------------------------------------------------------------
# 1. flat profile under slack constraints


def test_c01_flat_profile():
    rng = np.random.default_rng(101)
    solve_p1(P1Instance(range(2), (0,), [0.0, 1.0], [1.0], [10.0], [[True, True]], 1.0))  # compile
    worst_flat = worst_match = 0.0
    t0 = time.perf_counter()
    for _ in range(50):
        n, w = int(rng.integers(1, 6)), int(rng.integers(1, 11))
        h = float(rng.choice([0.25, 1.0]))
        base = rng.uniform(0, 100, w)
        # enough energy to lift every slot to a common level
        fill = (base.max() - base).sum() * h
        demands = rng.dirichlet(np.ones(n)) * (fill + rng.uniform(1, 200))
        inst = P1Instance(range(w), tuple(range(n)), base, demands, np.full(n, 1e6), np.ones((n, w), bool), h)
        sol = solve_p1(inst)
        c = (base.sum() + demands.sum() / h) / w
        worst_flat = max(worst_flat, float(np.abs(sol.z_star_kw - c).max() / c))
        plan = lccm([SaSummary(0, float(demands.sum()), range(w))], base, 0, h)
        cost = float(slot_costs(CostModel(), plan.z_star_kw, base, h).sum())
        worst_match = max(worst_match, abs(cost - sol.objective) / sol.objective)
    elapsed = time.perf_counter() - t0
    ok = worst_flat <= 1e-5 and worst_match <= 1e-6 and elapsed < 1.0
    report(1, ok, f"flat profile: max |z-c|/c = {worst_flat:.2e} (<= 1e-5), lccm vs P1 objective "
                  f"{worst_match:.2e} (<= 1e-6), {elapsed:.2f} s (< 1 s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. oracle equivalence on tiny instances


def tiny_p1(rng):
    n, w = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    avail = rng.random((n, w)) < 0.75
    avail[np.arange(n), rng.integers(0, w, n)] = True
    units = [int(rng.integers(0, 10 * a.sum() + 1)) for a in avail]
    base = rng.uniform(0, 20, w)
    return n, w, avail, units, base


def test_c02_oracle_equivalence():
    rng = np.random.default_rng(202)
    h, p_max = 0.25, 6.6
    unit = 0.1 * p_max * h
    worst = -math.inf
    t0 = time.perf_counter()
    for _ in range(100):
        n, w, avail, units, base = tiny_p1(rng)
        best, _ = brute_p1(base * h, units, avail, unit, 10)
        sol = solve_p1(P1Instance(range(w), tuple(range(n)), base, np.array(units) * unit, np.full(n, p_max),
                                  avail, h))
        worst = max(worst, (sol.objective - best) / max(best, 1e-300) if best > 0 else sol.objective)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 30
    report(2, ok, f"solve_p1 vs exhaustive: worst relative excess {worst:+.2e} (<= 1e-3), {elapsed:.1f} s (< 30 s)")
    assert ok


# ---------------------------------------------------------------------------
# 3. Pareto / lexicographic optimality


def tiny_scenario_for_pareto(rng):
    T = 5  # four chargeable slots, deadlines at most slot 4
    unit = 0.165
    evs = []
    for i in range(int(rng.integers(1, 4))):
        a = int(rng.integers(0, T - 2))
        r = int(rng.integers(a + 1, T))
        k = int(rng.integers(1, 10 * (r - a) + 1))
        evs.append(EvRequest(i, 0, a, r, 1.0 - k * unit / 30.0))
    base = np.round(rng.uniform(0, 12, T), 1)
    return Scenario(TimeGrid(T, 15), tuple(evs), base, station_shares=(1.0,)), unit


def ev_j2_scorer(sc, unit):
    h = sc.grid.slot_hours

    def score(i, row):
        ev = sc.evs[i]
        soc, total = ev.soc_init, 0.0
        for t in range(ev.arrival_slot, ev.deadline_slot):
            if soc >= ev.soc_target - 1e-9:
                total += 1.0
            else:
                total += convenience(ev, soc, t, h).u
            soc += row[t] * unit / ev.capacity_kwh
        return total

    return score


def slot_j2_matches(sc, unit):
    """At every slot of a CSA run, UCM's u-weighted allocation equals the enumerated maximum."""
    from evsched.centralized import csa_step
    from evsched.core import active_sets

    h = sc.grid.slot_hours
    state = FleetState.initial(sc)
    forecast = np.array(sc.base_load_kw)
    mismatches = 0
    for t in range(sc.grid.horizon_slots):
        sets = active_sets(sc, state.copy(), t)
        idx = list(sets.evs)
        if idx:
            residual = state.residual_kwh(sc)[idx]
            u = np.array([convenience(sc.evs[i], state.soc[i], t, h).u for i in idx])
            caps = [int(min(10, round(r / unit))) for r in residual]
        d = csa_step(sc, state, t, forecast)
        if not idx:
            continue
        units = int(round(d.headroom_kw * h / unit))
        res = ucm(units * unit / h, u, [6.6] * len(idx), np.array(caps) * unit, h)
        got = float(u @ (res.rates_kw * h / unit))
        if abs(got - brute_slot_allocation(units, u, caps)) > 1e-9:
            mismatches += 1
    return mismatches


def test_c03_pareto():
    rng = np.random.default_rng(303)
    dominated, slot_mismatch, examples = 0, 0, []
    t0 = time.perf_counter()
    for k in range(25):
        sc, unit = tiny_scenario_for_pareto(rng)
        T = sc.grid.horizon_slots
        _, m = run_csa(sc, "perfect")
        units = [round(ev.demand_kwh / unit) for ev in sc.evs]
        avail = [[ev.arrival_slot <= t < ev.deadline_slot for t in range(T)] for ev in sc.evs]
        pts = pareto_points(np.array(sc.base_load_kw) * 0.25, units, avail, unit, 10, ev_j2_scorer(sc, unit))
        tol1, tol2 = 1e-12 * max(1.0, m.cost), 1e-9
        dom = ((pts[:, 0] <= m.cost + tol1) & (pts[:, 1] > m.convenience + tol2)) | \
              ((pts[:, 0] < m.cost - tol1) & (pts[:, 1] >= m.convenience - tol2))
        if dom.any():
            dominated += 1
            j = int(np.flatnonzero(dom)[np.argmin(pts[dom, 0])])
            examples.append(f"#{k}: csa ({m.cost:.7f}, {m.convenience:.3f}) vs ({pts[j, 0]:.7f}, {pts[j, 1]:.3f})")
        slot_mismatch += slot_j2_matches(sc, unit)
    elapsed = time.perf_counter() - t0
    ok = dominated == 0 and slot_mismatch == 0 and elapsed < 60
    report(3, ok, f"Pareto: {dominated}/25 full CSA runs dominated by an enumerated schedule; "
                  f"per-slot UCM J2 vs enumerated max: {slot_mismatch} mismatches; {elapsed:.1f} s (< 60 s)"
           + (f"; e.g. {examples[0]}" if examples else ""))
    assert ok


# ---------------------------------------------------------------------------
# 4. DUCM reproduces UCM


def test_c04_ducm_equals_ucm():
    rng = np.random.default_rng(404)
    worst_diff, worst_iter = 0.0, 0
    t0 = time.perf_counter()
    for _ in range(200):
        n = int(rng.integers(1, 200))
        u = rng.uniform(1e-4, 1.0, n)
        while len(np.unique(u)) < n:
            u = rng.uniform(1e-4, 1.0, n)
        station = rng.integers(0, 6, n)
        headroom = float(rng.uniform(0, 1.1) * 6.6 * n)
        cands = [StationCandidates(m, np.flatnonzero(station == m), u[station == m],
                                   np.full((station == m).sum(), 6.6), np.zeros((station == m).sum()))
                 for m in range(6)]
        res = ducm(headroom, cands, epsilon=1e-4, p_band_kw=6.6)
        got = res.rate_of(cands)
        d = np.array([got[i] for i in range(n)])
        ref = ucm(headroom, u, np.full(n, 6.6), np.full(n, 1e6), 0.25).rates_kw
        worst_diff = max(worst_diff, float(np.abs(d - ref).max()))
        worst_iter = max(worst_iter, res.state.iterations)
    elapsed = time.perf_counter() - t0
    ok = worst_diff <= 1e-9 and worst_iter <= 15 and elapsed < 5
    report(4, ok, f"DUCM vs UCM on 200 pooled sets: max |rate diff| {worst_diff:.1e} kW, "
                  f"max iterations {worst_iter} (<= 15), {elapsed:.2f} s (< 5 s)")
    assert ok


# ---------------------------------------------------------------------------
# 5, 6, 9. Monte Carlo


@pytest.mark.slow
def test_c05_cost_gap():
    res, _ = monte_carlo()
    csa, dcsa = mean(res[(200, "csa")], "cost"), mean(res[(200, "dcsa")], "cost")
    gap = dcsa / csa - 1.0
    ok = gap <= 0.05
    report(5, ok, f"N=200, 100 reps: mean cost CSA {csa:.3f}, DCSA {dcsa:.3f}, gap {100 * gap:+.2f}% (<= 5%)")
    assert ok


@pytest.mark.slow
def test_c06_charging_time():
    res, elapsed = monte_carlo()
    parts, ok = [], True
    for n in (100, 200):
        base = mean(res[(n, "cost-min")], "mean_charging_time_h")
        for method in ("csa", "dcsa"):
            v = mean(res[(n, method)], "mean_charging_time_h")
            cut = 1.0 - v / base
            ok &= cut >= 0.25
            parts.append(f"N={n} {method} {v:.2f} h vs {base:.2f} h (-{100 * cut:.1f}%)")
    ok &= elapsed < 600
    report(6, ok, "; ".join(parts) + f"; need >= 25% cut; Monte Carlo {elapsed:.0f} s (< 600 s)")
    assert ok


@pytest.mark.slow
def test_c09_conservation():
    res, _ = monte_carlo()
    problems, runs, worst_soc, worst_energy = [], 0, 0.0, 0.0
    for (n, method), runs_ in res.items():
        for m, probs in runs_:
            runs += 1
            problems += [f"N={n} {method}: {p}" for p in probs]
            worst_soc = max(worst_soc, m.max_soc)
            worst_energy = max(worst_energy, m.conservation_error)
            if m.n_missed:
                problems.append(f"N={n} {method}: {m.n_missed} missed")
    ok = not problems and worst_soc <= 1 + 1e-9 and worst_energy <= 1e-6
    report(9, ok, f"{runs} runs: {len(problems)} violations, max SOC {worst_soc:.12f}, "
                  f"worst energy mismatch {worst_energy:.1e} (<= 1e-6)")
    assert ok, problems[:5]


# ---------------------------------------------------------------------------
# 7. message accounting on a real slot


def first_slot_with_ten_iterations():
    """Whole fleet plugged in at slot 0 with deadline 95 so every station window spans 96 slots."""
    cfg = GeneratorConfig(arrival_window=("18:00", "18:00"), deadline_window=("17:45", "17:45"))
    for seed in range(500):
        sc = generate_scenario(seed, 200, cfg)
        ledger = MessageLedger()
        d = dcsa_step(sc, FleetState.initial(sc), 0, resolve_base_forecast(sc, "seasonal-naive"), MessageBus(ledger))
        if d.iterations == 10:
            return seed, sc, ledger
    raise AssertionError("no seed gave a 10-iteration slot")


def test_c07_message_accounting():
    seed, sc, ledger = first_slot_with_ten_iterations()
    s = ledger.slot(0)
    dcsa_units = ledger.ca_side(0)
    schedule, _ = run_csa(sc)
    full = run_csa_ledger(sc, schedule)
    csa_units = full.ca_side(0)
    ok = s.window_lens == (96,) * 6 and s.iterations == 10 and dcsa_units == 1068 and csa_units == 1600
    report(7, ok, f"slot 0 of seed {seed}: M=6, |W_m|={s.window_lens[0]}, a={s.iterations}: "
                  f"DCSA {dcsa_units} units (want 1068), CSA {csa_units} units (want 1600)")
    assert ok


# ---------------------------------------------------------------------------
# 8. scaling


def test_c08_scaling():
    sc = generate_scenario(8, 2000)
    forecast = resolve_base_forecast(sc, "seasonal-naive")
    state = FleetState.initial(sc)
    bus = MessageBus(MessageLedger())
    worst = 0.0
    t0 = time.perf_counter()
    for t in range(sc.grid.horizon_slots):
        worst = max(worst, dcsa_step(sc, state, t, forecast, bus).seconds)
    total = time.perf_counter() - t0
    missed = sum(f is None for f in state.finished_slot)
    ok = worst < 1.0 and missed == 0
    report(8, ok, f"DCSA N=2000, 96 slots: {total:.1f} s total, worst LCCM+DUCM slot {worst * 1e3:.1f} ms (< 1 s), "
                  f"{missed} missed")
    assert ok


# ---------------------------------------------------------------------------
# 10. MAPE


def test_c10_mape():
    actual = np.array([310.0, 420.0, 515.0, 600.0, 380.0])
    perfect = mape(actual, actual)
    uniform = mape(1.1 * actual, actual)
    ok = perfect == 0.0 and abs(uniform - 0.10) <= 1e-12
    report(10, ok, f"MAPE perfect {perfect:.3f} (0), uniform +10% {uniform:.12f} (0.10); the published "
                   f"1.79%/4.52% need the original load data and are not reproduced")
    assert ok


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_c") and callable(fn):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)

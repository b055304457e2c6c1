"""Post-run analytics, comparison tables, and the two comparison baselines.

The baselines are reconstructions used as anchors, not reimplementations of
any published method:

* ``cost-min``: the same per-slot cost-optimal plan as the centralized
  scheduler, with the headroom spread earliest-deadline-first at each EV's
  even rate ``residual / slots_left``. EVs finish close to their deadlines.
* ``convenience-max``: the greedy convenience allocation with the headroom
  set to ``peak cap - base load``, ignoring cost.

Tables are written as CSV or as JSON with sorted keys.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np

from .core import SOC_TOL, FleetState, Scenario, ScenarioError, Schedule, active_sets, dumps_scenario, update_soc
from .objectives import total_convenience, total_cost


def scenario_digest(scenario: Scenario) -> str:
    return hashlib.sha256(dumps_scenario(scenario).encode()).hexdigest()[:16]


@dataclass
class ChargingTimes:
    hours: np.ndarray  # per EV, nan when unfinished
    unfinished: tuple  # fleet rows that never reached their target

    @property
    def finished_hours(self) -> np.ndarray:
        return self.hours[~np.isnan(self.hours)]

    @property
    def mean_hours(self) -> float:
        f = self.finished_hours
        return float(f.mean()) if len(f) else float("nan")


def charging_times(schedule: Schedule, scenario: Scenario) -> ChargingTimes:
    """Time from arrival to finishing, in hours."""
    h = scenario.grid.slot_hours
    out = np.full(scenario.n_evs, np.nan)
    unfinished = []
    for i, ev in enumerate(scenario.evs):
        fin = schedule.finished_slot[i]
        if fin is None:
            unfinished.append(i)
        else:
            out[i] = (fin - ev.arrival_slot) * h
    return ChargingTimes(out, tuple(unfinished))


def cdf(samples):
    """Empirical CDF: sorted samples and the fraction of samples at or below each."""
    x = np.sort(np.asarray(samples, dtype=float))
    x = x[~np.isnan(x)]
    y = np.arange(1, len(x) + 1) / max(len(x), 1)
    return x, y


@dataclass
class RunMetrics:
    method: str
    scenario: str  # digest of the serialized scenario
    n_evs: int
    cost: float
    cost_incremental: float
    convenience: float
    mean_charging_time_h: float
    peak_load_kw: float
    peak_cap_kw: Optional[float]
    n_finished: int
    n_missed: int
    max_soc: float
    energy_delivered_kwh: float
    energy_demand_kwh: float
    conservation_error: float  # worst per-EV |delivered - demand| / demand over finished EVs
    messages: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(schedule: Schedule, scenario: Scenario, ledger=None) -> RunMetrics:
    h = scenario.grid.slot_hours
    times = charging_times(schedule, scenario)
    delivered = schedule.rates_kw.sum(axis=1) * h
    demand = np.array([ev.demand_kwh for ev in scenario.evs])
    worst = 0.0
    for i in range(scenario.n_evs):
        if schedule.finished_slot[i] is not None and demand[i] > 0:
            worst = max(worst, abs(delivered[i] - demand[i]) / demand[i])
    total_load = schedule.total_load_kw
    return RunMetrics(
        method=schedule.method,
        scenario=scenario_digest(scenario),
        n_evs=scenario.n_evs,
        cost=total_cost(schedule, scenario),
        cost_incremental=float("nan") if schedule.cost is None else schedule.cost,
        convenience=total_convenience(schedule, scenario),
        mean_charging_time_h=times.mean_hours,
        peak_load_kw=float(total_load.max()) if len(total_load) else 0.0,
        peak_cap_kw=scenario.peak_cap_kw,
        n_finished=scenario.n_evs - len(times.unfinished),
        n_missed=len(times.unfinished),
        max_soc=float(schedule.soc_final.max(initial=0.0)),
        energy_delivered_kwh=math.fsum(delivered),
        energy_demand_kwh=math.fsum(demand),
        conservation_error=worst,
        messages={} if ledger is None else ledger.totals(),
    )


COMPARE_METRICS = ("cost", "convenience", "mean_charging_time_h", "peak_load_kw")


@dataclass
class Comparison:
    labels: tuple
    raw: dict  # metric -> tuple of values in label order
    normalized: dict  # metric -> values divided by the largest

    def rows(self):
        for k, label in enumerate(self.labels):
            yield label, {m: (self.raw[m][k], self.normalized[m][k]) for m in self.raw}


def normalize(values) -> tuple:
    v = np.asarray(values, dtype=float)
    top = np.max(np.abs(v)) if len(v) else 0.0
    if top == 0:
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in v / top)


def compare_methods(results: Mapping[str, RunMetrics], metrics=COMPARE_METRICS) -> Comparison:
    """Each metric divided by its largest value across runs; raw values kept."""
    if len(results) < 2:
        raise ValueError("need at least two runs to compare")
    digests = {r.scenario for r in results.values()}
    if len(digests) != 1:
        raise ScenarioError("runs were made on different scenarios")
    labels = tuple(results)
    raw = {m: tuple(float(getattr(results[k], m)) for k in labels) for m in metrics}
    return Comparison(labels, raw, {m: normalize(raw[m]) for m in metrics})


def comparison_csv(comp: Comparison) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    metrics = list(comp.raw)
    w.writerow(["method"] + metrics + [f"{m}_norm" for m in metrics])
    for label, vals in comp.rows():
        w.writerow([label] + [repr(vals[m][0]) for m in metrics] + [repr(vals[m][1]) for m in metrics])
    return buf.getvalue()


def metrics_json(metrics: RunMetrics) -> str:
    return json.dumps(_plain(metrics.to_dict()), sort_keys=True, indent=1) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if math.isnan(f) else f
    return obj


METRICS_CSV_COLUMNS = ("method", "n_evs", "rep", "seed", "cost", "convenience", "mean_charging_time_h",
                       "peak_load_kw", "n_missed", "max_soc", "messages_total")


def metrics_row(m: RunMetrics, rep: int = 0, seed=None) -> list:
    return [m.method, m.n_evs, rep, "" if seed is None else seed, repr(m.cost), repr(m.convenience),
            repr(m.mean_charging_time_h), repr(m.peak_load_kw), m.n_missed, repr(m.max_soc),
            sum(m.messages.values()) if m.messages else 0]


# ---------------------------------------------------------------------------
# baselines


def edf_spread(headroom_kw: float, deadlines, ids, residual_kwh, p_max_kw, slots_left, slot_hours,
               floors_kw) -> np.ndarray:
    """Earliest-deadline-first allocation at each EV's even rate, then leftovers in the same order."""
    residual = np.asarray(residual_kwh, dtype=float)
    cap = np.minimum(np.asarray(p_max_kw, dtype=float), residual / slot_hours)
    even = np.minimum(residual / (np.asarray(slots_left) * slot_hours), cap)
    rates = np.minimum(np.asarray(floors_kw, dtype=float), cap)
    remain = headroom_kw - rates.sum()
    order = np.lexsort((np.asarray(ids), np.asarray(deadlines)))
    for target in (even, cap):
        for i in order:
            if remain <= 1e-9:
                return rates
            extra = min(remain, max(target[i] - rates[i], 0.0))
            rates[i] += extra
            remain -= extra
    return rates


def run_cost_min(scenario: Scenario, forecaster="seasonal-naive", strict: bool = False):
    """Cost-optimal plan with deadline-ordered even spreading (reconstructed baseline)."""
    from .centralized import RunRecorder, SlotDecision, build_p1, floor_rates, resolve_base_forecast
    from .qp import InfeasibleError, available_power, solve_p1

    h = scenario.grid.slot_hours
    forecast_kw = resolve_base_forecast(scenario, forecaster)
    state = FleetState.initial(scenario)
    rec = RunRecorder(scenario, "cost-min")
    for t in range(scenario.grid.horizon_slots):
        sets = active_sets(scenario, state, t)
        rates = np.zeros(scenario.n_evs)
        idx = sets.evs
        headroom = 0.0
        relaxed = False
        if idx:
            inst = build_p1(scenario, state, sets, forecast_kw, t)
            sol = solve_p1(inst)
            if not sol.ok and not strict and inst.peak_cap_kw is not None:
                sol = solve_p1(build_p1(scenario, state, sets, forecast_kw, t, use_cap=False))
                relaxed = True
            if not sol.ok:
                raise InfeasibleError(f"slot {t}: {sol.message}", sol.binding_window)
            headroom = float(available_power(sol.z_star_kw[:1], inst.base_kw[:1])[0])
            evs = [scenario.evs[i] for i in idx]
            residual = state.residual_kwh(scenario)[list(idx)]
            p_max = np.array([ev.p_max_kw for ev in evs])
            left = np.array([ev.deadline_slot - t for ev in evs])
            floors = floor_rates(residual, p_max, left, h)
            rates[list(idx)] = edf_spread(headroom, [ev.deadline_slot for ev in evs], [ev.id for ev in evs],
                                          residual, p_max, left, h, floors)
        update_soc(scenario, state, rates, t)
        rec.record(SlotDecision(t, rates, headroom, relaxed_cap=relaxed))
    schedule = rec.finish(state)
    return schedule, summarize(schedule, scenario)


def run_convenience_max(scenario: Scenario, forecaster=None):
    """Greedy convenience allocation of all power under the peak cap (reconstructed baseline)."""
    from .centralized import RunRecorder, SlotDecision, allocate

    state = FleetState.initial(scenario)
    rec = RunRecorder(scenario, "convenience-max")
    for t in range(scenario.grid.horizon_slots):
        sets = active_sets(scenario, state, t)
        idx = sets.evs
        rates = np.zeros(scenario.n_evs)
        headroom = 0.0
        if idx:
            if scenario.peak_cap_kw is None:
                headroom = float(sum(scenario.evs[i].p_max_kw for i in idx))
            else:
                headroom = max(scenario.peak_cap_kw - scenario.base_load_kw[t], 0.0)
            res, _ = allocate(scenario, state, idx, t, headroom)
            rates[list(idx)] = res.rates_kw
        update_soc(scenario, state, rates, t)
        rec.record(SlotDecision(t, rates, headroom))
    schedule = rec.finish(state)
    return schedule, summarize(schedule, scenario)


def check_conservation(schedule: Schedule, scenario: Scenario, rel_tol: float = 1e-6) -> list:
    """Violations of the run invariants, as human-readable strings (empty when clean)."""
    problems = []
    h = scenario.grid.slot_hours
    T = scenario.grid.horizon_slots
    slots = np.arange(T)
    for i, ev in enumerate(scenario.evs):
        r = schedule.rates_kw[i]
        outside = (slots < ev.arrival_slot) | (slots >= ev.deadline_slot)
        if np.any(r[outside] != 0):
            problems.append(f"EV {ev.id} charged outside its stay")
        if np.any(r < 0) or np.any(r > ev.p_max_kw * (1 + 1e-12)):
            problems.append(f"EV {ev.id} rate out of bounds")
        if schedule.soc_final[i] > 1 + SOC_TOL:
            problems.append(f"EV {ev.id} SOC above 1")
        if schedule.finished_slot[i] is None:
            problems.append(f"EV {ev.id} missed its deadline")
            continue
        delivered = math.fsum(r) * h
        if abs(delivered - ev.demand_kwh) > rel_tol * max(ev.demand_kwh, 1e-12) and ev.demand_kwh > 0:
            problems.append(f"EV {ev.id} delivered {delivered} kWh for demand {ev.demand_kwh}")
    over = np.flatnonzero(schedule.rates_kw.sum(axis=0) > schedule.headroom_kw + 1e-6)
    if len(over):
        problems.append(f"headroom exceeded at slots {over.tolist()}")
    return problems

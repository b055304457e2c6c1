"""Online centralized scheduler: per-slot cost-optimal load, then greedy convenience allocation.

Each slot the aggregator solves the valley-filling problem over the current
sliding window with residual demands, takes the current slot's headroom, and
hands it out by descending convenience. Before the greedy pass every EV gets
its floor, the power it must draw now to stay able to finish by its deadline;
the cost-optimal plan always covers the floors, so this never changes the
headroom, only guarantees nobody is starved into a missed deadline.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .core import (ActiveSets, FleetState, Scenario, ScenarioError, Schedule, active_sets,
                   update_soc)
from .forecast import ForecastSeries, get_forecaster
from .objectives import CostModel, convenience_values, slot_cost
from .qp import InfeasibleError, P1Instance, available_power, solve_p1

log = logging.getLogger(__name__)

# headroom left after the greedy pass below this (kW) is treated as zero
RATE_TOL = 1e-9


@dataclass
class SlotDecision:
    t: int
    rates_kw: np.ndarray  # one entry per EV in the fleet
    headroom_kw: float
    selected: tuple = ()  # fleet rows in allocation order
    u_min: float = float("nan")
    iterations: int = 0
    z_star_kw: Optional[np.ndarray] = None  # planned total load over the window
    window: range = range(0)
    relaxed_cap: bool = False

    @property
    def headroom_used(self) -> float:
        return float(self.rates_kw.sum())


@dataclass
class UcmResult:
    rates_kw: np.ndarray  # aligned with the candidate arrays
    order: np.ndarray  # candidate positions by priority
    selected: tuple  # candidate positions that received power, in order
    unused_kw: float
    floors_kw: np.ndarray = None

    def u_min(self, u) -> float:
        """Lowest convenience among EVs charged beyond their floor (nan if none)."""
        above = self.rates_kw > self.floors_kw
        return float(np.asarray(u)[above].min()) if np.any(above) else float("nan")


def floor_rates(residual_kwh, p_max_kw, slots_left, slot_hours) -> np.ndarray:
    """Power each EV must draw this slot to still finish with ``slots_left - 1`` slots after it."""
    residual = np.asarray(residual_kwh, dtype=float)
    e = np.asarray(p_max_kw, dtype=float) * slot_hours
    need = residual - e * (np.asarray(slots_left) - 1)
    return np.maximum(need, 0.0) / slot_hours


def priority_order(u, ids) -> np.ndarray:
    """Descending u, ties broken by ascending EV id."""
    return np.lexsort((np.asarray(ids), -np.asarray(u, dtype=float)))


def ucm(headroom_kw: float, u, p_max_kw, residual_kwh, slot_hours: float, ids=None,
        floors_kw=None, p_min_kw=None) -> UcmResult:
    """Greedy allocation of ``headroom_kw`` by descending convenience.

    Rates are capped by both p_max and the residual energy. A partial rate
    that would fall below the EV's p_min is skipped and the power spills to
    the next EV in the order.
    """
    u = np.asarray(u, dtype=float)
    n = len(u)
    ids = np.arange(n) if ids is None else np.asarray(ids)
    cap = np.minimum(np.asarray(p_max_kw, dtype=float) * np.ones(n),
                     np.asarray(residual_kwh, dtype=float) / slot_hours)
    cap = np.maximum(cap, 0.0)
    floors = np.zeros(n) if floors_kw is None else np.minimum(np.asarray(floors_kw, dtype=float), cap)
    p_min = np.zeros(n) if p_min_kw is None else np.asarray(p_min_kw, dtype=float) * np.ones(n)
    if headroom_kw < 0:
        raise ValueError("headroom must be non-negative")

    rates = floors.copy()
    remain = headroom_kw - floors.sum()
    if remain < -RATE_TOL * max(1.0, headroom_kw):
        raise ValueError(f"floors ({floors.sum():.6g} kW) exceed the headroom ({headroom_kw:.6g} kW)")
    order = priority_order(u, ids)
    for i in order:
        if remain <= RATE_TOL:
            break
        extra = min(remain, cap[i] - rates[i])
        if extra <= 0:
            continue
        if rates[i] + extra < p_min[i] and rates[i] + extra < cap[i]:
            continue
        rates[i] += extra
        remain -= extra
    selected = tuple(int(i) for i in order if rates[i] > 0)
    return UcmResult(rates, order, selected, max(remain, 0.0), floors)


def resolve_base_forecast(scenario: Scenario, forecaster: Union[str, Callable, np.ndarray, None]) -> np.ndarray:
    """Forecast of the base load over the horizon, in kW.

    ``"perfect"`` (or a scenario without history) uses the actual base load;
    a name picks a registered strategy; a callable is called with the history.
    """
    T = scenario.grid.horizon_slots
    if forecaster is None or (isinstance(forecaster, str) and forecaster == "perfect"):
        return np.array(scenario.base_load_kw, dtype=float)
    if isinstance(forecaster, np.ndarray):
        values = np.asarray(forecaster, dtype=float)
    else:
        if scenario.history_kw is None:
            log.warning("scenario has no load history; using the actual base load")
            return np.array(scenario.base_load_kw, dtype=float)
        fn = get_forecaster(forecaster) if isinstance(forecaster, str) else forecaster
        out = fn(scenario.history_kw, T)
        values = out.values_kw if isinstance(out, ForecastSeries) else np.asarray(out, dtype=float)
    if values.shape != (T,):
        raise ScenarioError(f"forecast must have {T} values")
    return np.array(values, dtype=float)


def window_base(scenario: Scenario, forecast_kw: np.ndarray, window: range) -> np.ndarray:
    """Forecast over the window with the current slot replaced by the observed base load."""
    base = np.array(forecast_kw[window.start:window.stop], dtype=float)
    base[0] = scenario.base_load_kw[window.start]
    return base


def window_cap(scenario: Scenario, base_w: np.ndarray):
    if scenario.peak_cap_kw is None:
        return None
    # a forecast above the cap would make the plan infeasible before any EV is placed
    return np.maximum(scenario.peak_cap_kw, base_w)


def build_p1(scenario: Scenario, state: FleetState, sets: ActiveSets, forecast_kw: np.ndarray,
             t: int, use_cap: bool = True) -> P1Instance:
    idx = sets.evs
    window = sets.window
    evs = [scenario.evs[i] for i in idx]
    base_w = window_base(scenario, forecast_kw, window)
    slots = np.arange(window.start, window.stop)
    avail = np.array([slots < ev.deadline_slot for ev in evs], dtype=bool).reshape(len(evs), len(slots))
    residual = state.residual_kwh(scenario)[list(idx)]
    return P1Instance(
        window=window,
        ev_ids=tuple(ev.id for ev in evs),
        base_kw=base_w,
        demands_kwh=residual,
        p_max_kw=np.array([ev.p_max_kw for ev in evs]),
        availability=avail,
        slot_hours=scenario.grid.slot_hours,
        cost=CostModel.of(scenario),
        p_min_kw=np.array([ev.p_min_kw for ev in evs]),
        peak_cap_kw=window_cap(scenario, base_w) if use_cap else None,
    )


def allocate(scenario: Scenario, state: FleetState, idx, t: int, headroom_kw: float):
    """Floors plus convenience-ordered greedy over fleet rows ``idx``; returns ``(UcmResult, u)``."""
    h = scenario.grid.slot_hours
    evs = [scenario.evs[i] for i in idx]
    residual = state.residual_kwh(scenario)[list(idx)]
    p_max = np.array([ev.p_max_kw for ev in evs])
    floors = floor_rates(residual, p_max, [ev.deadline_slot - t for ev in evs], h)
    u = convenience_values(scenario, state.soc, idx, t)
    res = ucm(headroom_kw, u, p_max, residual, h, ids=[ev.id for ev in evs], floors_kw=floors,
              p_min_kw=[ev.p_min_kw for ev in evs])
    return res, u


def csa_step(scenario: Scenario, state: FleetState, t: int, forecast_kw: np.ndarray,
             strict: bool = True, tolerance: float = 1e-6) -> SlotDecision:
    """Schedule slot ``t`` and advance ``state`` by one slot."""
    n = scenario.n_evs
    sets = active_sets(scenario, state, t)
    idx = sets.evs
    rates = np.zeros(n)
    if not idx:
        update_soc(scenario, state, rates, t)
        return SlotDecision(t, rates, 0.0, z_star_kw=np.array([scenario.base_load_kw[t]]),
                            window=range(t, t + 1))

    instance = build_p1(scenario, state, sets, forecast_kw, t)
    sol = solve_p1(instance, tolerance=tolerance)
    relaxed = False
    if not sol.ok and instance.peak_cap_kw is not None and not strict:
        log.warning("slot %d: %s; planning without the peak cap", t, sol.message)
        sol = solve_p1(build_p1(scenario, state, sets, forecast_kw, t, use_cap=False), tolerance=tolerance)
        relaxed = True
    if not sol.ok:
        raise InfeasibleError(f"slot {t}: {sol.message}", sol.binding_window)

    headroom = float(available_power(sol.z_star_kw[:1], instance.base_kw[:1])[0])
    res, u = allocate(scenario, state, idx, t, headroom)
    rows = np.asarray(idx)
    rates[rows] = res.rates_kw
    u_min = res.u_min(u)
    update_soc(scenario, state, rates, t)
    return SlotDecision(t, rates, headroom, tuple(int(rows[k]) for k in res.selected), u_min,
                        z_star_kw=sol.z_star_kw, window=instance.window, relaxed_cap=relaxed)


@dataclass
class RunRecorder:
    """Collects slot decisions into a :class:`Schedule`, accumulating J1 on the way."""

    scenario: Scenario
    method: str
    rates: np.ndarray = None
    headroom: np.ndarray = None
    u_min: np.ndarray = None
    iterations: np.ndarray = None
    cost: float = 0.0
    notes: list = field(default_factory=list)

    def __post_init__(self):
        n, T = self.scenario.n_evs, self.scenario.grid.horizon_slots
        self.rates = np.zeros((n, T))
        self.headroom = np.zeros(T)
        self.u_min = np.full(T, np.nan)
        self.iterations = np.zeros(T, dtype=int)
        self._model = CostModel.of(self.scenario)

    def record(self, d: SlotDecision) -> None:
        t = d.t
        self.rates[:, t] = d.rates_kw
        self.headroom[t] = d.headroom_kw
        self.u_min[t] = d.u_min
        self.iterations[t] = d.iterations
        b = self.scenario.base_load_kw[t]
        # same expression as objectives.total_cost, so batch and incremental agree exactly
        self.cost += slot_cost(self._model, b + self.rates[:, t].sum(), b, self.scenario.grid.slot_hours)
        if d.relaxed_cap:
            self.notes.append(f"slot {t}: peak cap relaxed (plan infeasible under the cap)")

    def finish(self, state: FleetState) -> Schedule:
        for i, ev in enumerate(self.scenario.evs):
            if state.finished_slot[i] is None:
                state.missed.add(i)
                self.notes.append(f"EV {ev.id} missed its deadline (soc {state.soc[i]:.6f})")
        return Schedule(self.method, self.rates, np.array(self.scenario.base_load_kw), self.headroom,
                        list(state.finished_slot), state.soc.copy(), self.u_min, self.iterations,
                        cost=self.cost, notes=self.notes)


def run_csa(scenario: Scenario, forecaster="seasonal-naive", strict: bool = False,
            tolerance: float = 1e-6):
    """Run the centralized scheduler over the horizon; returns ``(Schedule, metrics)``.

    With ``strict`` a slot whose plan is infeasible under the peak cap raises;
    otherwise the slot is planned without the cap and noted in the schedule.
    """
    from .metrics import summarize

    forecast_kw = resolve_base_forecast(scenario, forecaster)
    state = FleetState.initial(scenario)
    rec = RunRecorder(scenario, "csa")
    for t in range(scenario.grid.horizon_slots):
        rec.record(csa_step(scenario, state, t, forecast_kw, strict=strict, tolerance=tolerance))
    schedule = rec.finish(state)
    return schedule, summarize(schedule, scenario)


SCHEDULE_COLUMNS = ("t", "clock", "z_kw", "base_kw", "headroom_kw")


def schedule_csv(schedule: Schedule, scenario: Scenario) -> str:
    """Per-slot CSV: t, clock, z_kw, base_kw, headroom_kw, then one ``ev<id>_kw`` column per EV.

    ``z_kw`` is the realised total load (base plus charging).
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(SCHEDULE_COLUMNS) + [f"ev{ev.id}_kw" for ev in scenario.evs])
    z = schedule.total_load_kw
    for t in range(scenario.grid.horizon_slots):
        w.writerow([t, scenario.grid.label(t), repr(float(z[t])), repr(float(schedule.base_kw[t])),
                    repr(float(schedule.headroom_kw[t]))]
                   + [repr(float(r)) for r in schedule.rates_kw[:, t]])
    return buf.getvalue()

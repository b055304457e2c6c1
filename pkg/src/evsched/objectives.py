"""Charging cost and user-convenience models.

Loads enter the cost in per-slot energy (kW x slot hours), so the same fleet
costs the same regardless of slot length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Scenario, ScenarioError, Schedule


@dataclass(frozen=True)
class CostModel:
    k0: float = 1e-4
    k1: float = 1.2e-4

    def __post_init__(self):
        if self.k0 < 0 or self.k1 <= 0:
            raise ValueError("cost model needs k0 >= 0 and k1 > 0")

    @classmethod
    def of(cls, scenario: Scenario) -> "CostModel":
        return cls(scenario.price_k0, scenario.price_k1)

    def marginal(self, load_kwh: float) -> float:
        """Price of the next unit of energy at total slot load ``load_kwh``."""
        return self.k0 + self.k1 * load_kwh


def slot_cost(model: CostModel, z_kw: float, base_kw: float, slot_hours: float) -> float:
    """Integral of the marginal price from the base load up to the total load."""
    if z_kw < base_kw:
        raise ValueError(f"total load {z_kw} below base load {base_kw}")
    z = z_kw * slot_hours
    b = base_kw * slot_hours
    return model.k0 * (z - b) + 0.5 * model.k1 * (z * z - b * b)


def slot_costs(model: CostModel, z_kw, base_kw, slot_hours: float) -> np.ndarray:
    z = np.asarray(z_kw, dtype=float) * slot_hours
    b = np.asarray(base_kw, dtype=float) * slot_hours
    return model.k0 * (z - b) + 0.5 * model.k1 * (z * z - b * b)


def total_cost(schedule: Schedule, scenario: Scenario) -> float:
    """J1: slot costs summed in slot order."""
    model = CostModel.of(scenario)
    h = scenario.grid.slot_hours
    if schedule.rates_kw.shape[1] != scenario.grid.horizon_slots:
        raise ScenarioError("schedule does not cover the horizon")
    total = 0.0
    for t in range(scenario.grid.horizon_slots):
        charge = schedule.rates_kw[:, t].sum()
        total += slot_cost(model, schedule.base_kw[t] + charge, schedule.base_kw[t], h)
    return total


@dataclass(frozen=True)
class ConvenienceTerms:
    w_star: float
    w_remaining: int
    u: float


class MissedDeadline(ValueError):
    pass


def min_slots_needed(soc: float, soc_target: float, capacity_kwh: float, p_max_kw: float,
                     slot_hours: float) -> float:
    return (soc_target - soc) * capacity_kwh / (p_max_kw * slot_hours)


def convenience(ev, soc: float, t: int, slot_hours: float) -> ConvenienceTerms:
    """u = 1 / (w_star * w_remaining) for an unfinished EV at slot ``t``."""
    w_remaining = ev.deadline_slot - t
    if w_remaining < 1:
        raise MissedDeadline(f"EV {ev.id} unfinished at its deadline (slot {t})")
    w_star = min_slots_needed(soc, ev.soc_target, ev.capacity_kwh, ev.p_max_kw, slot_hours)
    if w_star <= 0:
        raise ValueError(f"EV {ev.id} is already at its target")
    return ConvenienceTerms(w_star, w_remaining, 1.0 / (w_star * w_remaining))


def convenience_values(scenario: Scenario, soc: np.ndarray, idx, t: int) -> np.ndarray:
    h = scenario.grid.slot_hours
    return np.array([convenience(scenario.evs[i], soc[i], t, h).u for i in idx], dtype=float)


def convenience_trace(scenario: Scenario, rates_kw: np.ndarray) -> np.ndarray:
    """Per-EV, per-slot convenience of a rate matrix (N x T).

    Unfinished EVs with slots left get u; EVs parked after finishing get 1
    until they leave; everything else is 0.
    """
    h = scenario.grid.slot_hours
    n, T = rates_kw.shape
    out = np.zeros((n, T))
    for i, ev in enumerate(scenario.evs):
        soc = ev.soc_init
        done = soc >= ev.soc_target - 1e-9
        for t in range(ev.arrival_slot, ev.deadline_slot):
            if done:
                out[i, t] = 1.0
                continue
            out[i, t] = convenience(ev, soc, t, h).u
            soc += rates_kw[i, t] * h / ev.capacity_kwh
            done = soc >= ev.soc_target - 1e-9
    return out


def total_convenience(schedule: Schedule, scenario: Scenario) -> float:
    """J2 over present EVs; finished-and-parked EVs count 1 per remaining slot."""
    if scenario.n_evs == 0:
        return 0.0
    return math.fsum(convenience_trace(scenario, schedule.rates_kw).ravel())

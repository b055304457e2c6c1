"""Exact solver for the cost-minimisation phase (quadratic valley filling).

The objective depends on the rates only through the per-slot totals ``z``, and
every EV's feasible set is a capped simplex over its available slots. We run
block-coordinate descent where each block is one EV's exact water-filling step
against everyone else's load; this converges to the global optimum because the
constraints separate across EVs.

A cap on ``z`` never needs its own multiplier: at the uncapped optimum, every EV
delivering into the set of peak slots is already at full rate in all its other
slots, so the energy in that set cannot shrink. Either the uncapped optimum
respects the cap, or no schedule does.

Internally everything is per-slot energy (kWh); the public surface is kW.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .objectives import CostModel, slot_costs

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"


class InfeasibleError(RuntimeError):
    def __init__(self, message, window=None):
        super().__init__(message)
        self.window = window


@dataclass
class P1Instance:
    window: range
    ev_ids: tuple
    base_kw: np.ndarray
    demands_kwh: np.ndarray
    p_max_kw: np.ndarray
    availability: np.ndarray  # (n_evs, len(window)) bool
    slot_hours: float
    cost: CostModel = field(default_factory=CostModel)
    p_min_kw: Optional[np.ndarray] = None  # kept for reference; phase 1 plans with a zero floor
    peak_cap_kw: Optional[np.ndarray] = None  # per slot, or None

    def __post_init__(self):
        self.base_kw = np.asarray(self.base_kw, dtype=float)
        self.demands_kwh = np.asarray(self.demands_kwh, dtype=float)
        self.p_max_kw = np.asarray(self.p_max_kw, dtype=float)
        self.availability = np.asarray(self.availability, dtype=bool).reshape(len(self.demands_kwh), -1)
        if self.peak_cap_kw is not None:
            self.peak_cap_kw = np.broadcast_to(np.asarray(self.peak_cap_kw, dtype=float), self.base_kw.shape)
        if len(self.base_kw) != len(self.window):
            raise ValueError("base load must cover the window")
        if self.availability.shape != (len(self.demands_kwh), len(self.window)):
            raise ValueError("availability must be (n_evs, window)")
        if np.any(self.demands_kwh < 0):
            raise ValueError("demands must be non-negative")
        if len(self.demands_kwh) and not len(self.window):
            raise ValueError("empty window with EVs to schedule")

    @property
    def n_evs(self) -> int:
        return len(self.demands_kwh)


@dataclass
class P1Solution:
    z_star_kw: np.ndarray
    rates_kw: np.ndarray
    objective: float
    status: str = OPTIMAL
    kkt_residual: float = 0.0
    sweeps: int = 0
    message: str = ""
    binding_window: tuple = ()
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@njit(cache=True)
def _fill_level(o, cap, demand):
    """Level L with sum(clip(L - o, 0, cap)) == demand."""
    n = o.shape[0]
    pts = np.empty(2 * n)
    slopes = np.empty(2 * n)
    for j in range(n):
        pts[j] = o[j]
        slopes[j] = 1.0
        pts[n + j] = o[j] + cap
        slopes[n + j] = -1.0
    order = np.argsort(pts, kind="mergesort")
    f = 0.0
    slope = 0.0
    prev = pts[order[0]]
    for k in range(2 * n):
        p = pts[order[k]]
        nxt = f + slope * (p - prev)
        if nxt >= demand and slope > 0.0:
            return prev + (demand - f) / slope
        f = nxt
        prev = p
        slope += slopes[order[k]]
    return prev


@njit(cache=True)
def _bcd(x, z, shadow, ptr, idx, e, demand, max_sweeps, tol):
    n = e.shape[0]
    for sweep in range(max_sweeps):
        change = 0.0
        for i in range(n):
            lo = ptr[i]
            hi = ptr[i + 1]
            m = hi - lo
            if m == 0:
                continue
            o = np.empty(m)
            for k in range(m):
                j = idx[lo + k]
                o[k] = z[j] - x[i, j] + shadow[j]
            if demand[i] <= 0.0:
                level = -np.inf
            else:
                level = _fill_level(o, e[i], demand[i])
            for k in range(m):
                j = idx[lo + k]
                v = level - o[k]
                if v > e[i]:
                    v = e[i]
                if v < 0.0:
                    v = 0.0
                d = abs(v - x[i, j])
                if d > change:
                    change = d
                z[j] += v - x[i, j]
                x[i, j] = v
        if change <= tol:
            return sweep + 1
    return max_sweeps


def _kkt_residual(x, z, shadow, avail, e):
    worst = 0.0
    g = z + shadow
    for i in range(x.shape[0]):
        js = np.flatnonzero(avail[i])
        if len(js) == 0:
            continue
        xi, gi = x[i, js], g[js]
        tol = 1e-9 * max(e[i], 1.0)
        up = gi[xi < e[i] - tol]
        down = gi[xi > tol]
        if len(up) and len(down):
            worst = max(worst, float(down.max() - up.min()))
    return worst


def solve_p1(instance: P1Instance, tolerance: float = 1e-6, max_sweeps: int = 10_000,
             trace: bool = False) -> P1Solution:
    """Minimum-cost total-load profile and one rate matrix achieving it.

    Block descent runs until no rate moves by more than 1e-13 of the load
    scale, far inside ``tolerance``; ``tolerance`` is also the relative slack
    allowed on the peak cap.
    """
    h = instance.slot_hours
    base = instance.base_kw * h
    n, w = instance.availability.shape
    model = instance.cost
    if n == 0 or w == 0:
        z = instance.base_kw.copy()
        return P1Solution(z, np.zeros((n, w)), 0.0)

    e = instance.p_max_kw * h
    demand = instance.demands_kwh.astype(float)
    avail = instance.availability
    reach = e * avail.sum(axis=1)
    short = np.flatnonzero(demand > reach * (1 + 1e-12) + 1e-12)
    if len(short):
        ids = [instance.ev_ids[i] for i in short]
        msg = f"EVs {ids} cannot reach their targets within window {instance.window.start}..{instance.window.stop - 1}"
        return _infeasible(instance, msg, tuple(instance.window))

    if instance.peak_cap_kw is not None and np.any(instance.peak_cap_kw < instance.base_kw - 1e-9):
        bad = tuple(int(instance.window[j]) for j in np.flatnonzero(instance.peak_cap_kw < instance.base_kw))
        return _infeasible(instance, "peak cap below base load", bad)

    ptr = np.zeros(n + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(avail.sum(axis=1))
    idx = np.nonzero(avail)[1].astype(np.int64)
    x = np.zeros((n, w))
    z = base.copy()
    shadow = np.zeros(w)
    scale = max(float(np.abs(base).max()), float(e.max()), 1e-12)
    sweeps = _bcd(x, z, shadow, ptr, idx, e, demand, max_sweeps, 1e-13 * scale)
    if sweeps >= max_sweeps:
        log.warning("block descent hit the sweep limit (%d)", max_sweeps)
    z = base + x.sum(axis=0)
    z_kw = z / h

    if instance.peak_cap_kw is not None:
        over = z_kw - instance.peak_cap_kw
        if np.any(over > max(tolerance, 1e-9) * max(1.0, float(instance.peak_cap_kw.max()))):
            binding = tuple(int(instance.window[j]) for j in np.flatnonzero(over > 0))
            return _infeasible(instance, f"demand cannot fit under the peak cap; binding slots "
                                         f"{binding[0]}..{binding[-1]}", binding)

    objective = float(slot_costs(model, z_kw, instance.base_kw, h).sum())
    kkt = _kkt_residual(x, z, shadow, avail, e)
    res = P1Solution(z_star_kw=z_kw, rates_kw=x / h, objective=objective, kkt_residual=kkt,
                     sweeps=int(sweeps))
    if trace:
        res.trace.append({"sweeps": int(sweeps), "kkt_residual": kkt})
    return res


def _infeasible(instance, message, window):
    n, w = instance.availability.shape
    return P1Solution(instance.base_kw.copy(), np.zeros((n, w)), float("nan"), status=INFEASIBLE,
                      message=message, binding_window=tuple(window))


def available_power(z_star_kw, base_kw) -> np.ndarray:
    """Charging headroom per slot: scheduled total load minus base load."""
    z = np.asarray(z_star_kw, dtype=float)
    b = np.asarray(base_kw, dtype=float)
    room = z - b
    if np.any(room < -1e-9 * max(1.0, float(np.abs(b).max(initial=0.0)))):
        raise ValueError("scheduled load below base load")
    return np.maximum(room, 0.0)


def flat_level(demand_kwh: float, base_kw, slot_hours: float, cap_kw=None) -> np.ndarray:
    """Valley-filling profile for an aggregate demand: z = clip(c, base, cap) with the level c
    chosen so the energy above base equals ``demand_kwh`` (kW out)."""
    base = np.asarray(base_kw, dtype=float) * slot_hours
    if demand_kwh <= 0:
        return base / slot_hours
    room = np.full_like(base, np.inf) if cap_kw is None else np.asarray(cap_kw, float) * slot_hours - base
    if demand_kwh > room.sum() * (1 + 1e-12):
        raise InfeasibleError("aggregate demand exceeds room under the cap")
    level = _water_level(base, np.maximum(room, 0.0), demand_kwh)
    z = base + np.clip(level - base, 0.0, room)
    return z / slot_hours


def _water_level(base, room, demand):
    lo, hi = float(base.min()), float((base + np.minimum(room, demand)).max())
    # sorted breakpoints give the exact piecewise-linear level
    tops = base + room
    pts = np.unique(np.concatenate([base, tops[np.isfinite(tops)]]))
    pts = pts[(pts >= lo) & (pts <= hi)]
    pts = np.append(pts, hi)
    filled = np.array([np.clip(p - base, 0.0, room).sum() for p in pts])
    k = int(np.searchsorted(filled, demand))
    if k == 0:
        return float(pts[0])
    if k >= len(pts):
        return float(pts[-1])
    p0, p1, f0, f1 = pts[k - 1], pts[k], filled[k - 1], filled[k]
    return float(p0 + (demand - f0) * (p1 - p0) / (f1 - f0)) if f1 > f0 else float(p1)

"""Distributed scheduler: flat-profile load planning at the aggregator, ring bisection among stations.

Per slot, every station sub-aggregator (SA) sends the central aggregator (CA)
its total residual demand and a window-long profile; the CA spreads the
pooled demand flat over the common window and broadcasts the current slot's
charging headroom. The SAs then pass a 4-value ring message around to find the
convenience threshold above which EVs charge at full rate, reproducing the
centralized greedy allocation without pooling the EV data anywhere.

Conventions:

* The threshold is bisected on ``u / (1 + u)``, which maps every positive
  convenience into ``(0, 1)``; the initial bounds 1 and 0 therefore always
  bracket the answer, however large ``u`` gets.
* ``u_min`` and ``b_char`` are priority keys: the convenience value with the
  EV id as tie-break (lower id first), so ties are resolved the same way as
  in the centralized greedy pass.
* If the EV holding the residual cannot absorb it (it is nearly full, or its
  rate is capped below the band width), a spill round moves the upper bound to
  that EV and the ring runs again; each spill is counted as an iteration.
* The window profile an SA sends is its as-late-as-possible power profile, so
  its first entry tells the CA how much power the station must draw now to
  keep every EV on track. The CA never broadcasts less headroom than the sum
  of these floors.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .centralized import RATE_TOL, RunRecorder, SlotDecision, floor_rates, resolve_base_forecast
from .core import FleetState, Scenario, active_sets, update_soc
from .objectives import convenience_values
from .qp import flat_level

log = logging.getLogger(__name__)

CA = "CA"

# scalars per message, per link
EV_TO_SA = 2  # deadline and target energy
SA_TO_EV = 1  # charging rate
CSA_SA_TO_CA = 7  # u, p_max, p_min, deadline, initial, target and capacity energy, per EV
CSA_CA_TO_SA = 1  # charging rate, per EV
CA_TO_SA = 1  # headroom
RING = 4  # u_min, P_char, b_char, i_char


def sa(m: int) -> str:
    return f"SA{m}"


def ev(i) -> str:
    return f"EV{i}"


# ---------------------------------------------------------------------------
# message accounting


@dataclass
class SlotTraffic:
    t: int
    n_by_station: tuple
    window_lens: tuple
    iterations: int
    counts: dict


@dataclass
class MessageLedger:
    """Scalar counts per link. ``sa_sa`` counts both the sending and the receiving side of each hop."""

    ev_sa: int = 0
    sa_ev: int = 0
    sa_ca: int = 0
    ca_sa: int = 0
    sa_sa: int = 0
    slots: list = field(default_factory=list)
    trace: Optional[list] = None  # (t, sender, receiver, kind, count) when tracing

    LINKS = ("ev_sa", "sa_ev", "sa_ca", "ca_sa", "sa_sa")

    def record(self, t: int, sender: str, receiver: str, kind: str, count: int) -> None:
        link = _link(sender, receiver)
        setattr(self, link, getattr(self, link) + count * (2 if link == "sa_sa" else 1))
        if self.slots and self.slots[-1].t == t:
            c = self.slots[-1].counts
            c[link] = c.get(link, 0) + count * (2 if link == "sa_sa" else 1)
        if self.trace is not None:
            self.trace.append((t, sender, receiver, kind, count))

    def open_slot(self, t: int, n_by_station, window_lens) -> SlotTraffic:
        s = SlotTraffic(t, tuple(n_by_station), tuple(window_lens), 0, {})
        self.slots.append(s)
        return s

    def totals(self) -> dict:
        return {k: getattr(self, k) for k in self.LINKS}

    @property
    def total(self) -> int:
        return sum(self.totals().values())

    def ca_side(self, t: Optional[int] = None) -> int:
        """Traffic that involves the CA or runs between SAs (EV links excluded)."""
        if t is None:
            return self.sa_ca + self.ca_sa + self.sa_sa
        c = self.slot(t).counts
        return c.get("sa_ca", 0) + c.get("ca_sa", 0) + c.get("sa_sa", 0)

    def slot(self, t: int) -> SlotTraffic:
        for s in self.slots:
            if s.t == t:
                return s
        raise KeyError(t)

    def trace_lines(self) -> str:
        if self.trace is None:
            raise ValueError("ledger was created without tracing")
        return "".join(f"{t} {s} {r} {k} {c}\n" for t, s, r, k, c in self.trace)


def _link(sender: str, receiver: str) -> str:
    kinds = (sender[:2], receiver[:2])
    return {("EV", "SA"): "ev_sa", ("SA", "EV"): "sa_ev", ("SA", "CA"): "sa_ca",
            ("CA", "SA"): "ca_sa", ("SA", "SA"): "sa_sa"}[kinds]


def csa_slot_units(n_by_station) -> dict:
    """Closed-form per-slot traffic of the centralized scheduler."""
    n = sum(n_by_station)
    if n == 0:
        return dict.fromkeys(MessageLedger.LINKS, 0)
    return {"ev_sa": EV_TO_SA * n, "sa_ev": SA_TO_EV * n, "sa_ca": CSA_SA_TO_CA * n,
            "ca_sa": CSA_CA_TO_SA * n, "sa_sa": 0}


def dcsa_slot_units(n_by_station, window_lens, iterations: int) -> dict:
    """Closed-form per-slot traffic of the distributed scheduler."""
    n = sum(n_by_station)
    M = len(window_lens)
    if n == 0:
        return dict.fromkeys(MessageLedger.LINKS, 0)
    return {"ev_sa": EV_TO_SA * n, "sa_ev": SA_TO_EV * n, "sa_ca": sum(w + 1 for w in window_lens),
            "ca_sa": CA_TO_SA * M, "sa_sa": 2 * RING * M * iterations}


class MessageBus:
    """Deterministic in-order delivery; every send is charged to the ledger."""

    def __init__(self, ledger: MessageLedger):
        self.ledger = ledger
        self.queue: deque = deque()
        self.t = 0

    def send(self, sender: str, receiver: str, kind: str, payload) -> None:
        payload = tuple(payload)
        self.ledger.record(self.t, sender, receiver, kind, len(payload))
        self.queue.append((sender, receiver, kind, payload))

    def receive(self, receiver: str, kind: str):
        """Pop the oldest pending message of ``kind`` for ``receiver``."""
        for k, msg in enumerate(self.queue):
            if msg[1] == receiver and msg[2] == kind:
                del self.queue[k]
                return msg[3]
        raise LookupError(f"no {kind} message pending for {receiver}")


# ---------------------------------------------------------------------------
# cost phase at the aggregator


@dataclass(frozen=True)
class SaSummary:
    station: int
    demand_kwh: float
    window: range
    profile_kw: tuple = ()  # as-late-as-possible power over the window

    def __post_init__(self):
        if self.demand_kwh < 0:
            raise ValueError("station demand must be non-negative")
        if self.profile_kw and len(self.profile_kw) != len(self.window):
            raise ValueError("profile must cover the window")

    @property
    def floor_kw(self) -> float:
        return float(self.profile_kw[0]) if self.profile_kw else 0.0

    @property
    def payload(self) -> tuple:
        return (self.demand_kwh,) + tuple(self.profile_kw if self.profile_kw else (0.0,) * len(self.window))


@dataclass
class LccmResult:
    z_star_kw: np.ndarray  # over ``window``
    window: range  # slots the demand was spread over
    fallback: bool = False  # union window used (intersection empty or too small under the cap)
    level_kw: float = float("nan")


def lccm(summaries: Sequence[SaSummary], base_kw, t: int, slot_hours: float, cap_kw=None) -> LccmResult:
    """Spread the pooled demand flat over the stations' common window.

    ``base_kw`` is indexed by absolute slot (a horizon-long array). Slots where
    the base load already exceeds the flat level keep the base load and the
    remainder is levelled over the other slots; this is the fixed point of
    repeatedly redistributing the below-base shortfall.
    """
    base_kw = np.asarray(base_kw, dtype=float)
    active = [s for s in summaries if len(s.window)]
    demand = math.fsum(s.demand_kwh for s in summaries)
    if not active or demand <= 0:
        return LccmResult(base_kw[t:t + 1].copy(), range(t, t + 1))
    start = max(s.window.start for s in active)
    stop = min(s.window.stop for s in active)
    fallback = stop <= start
    if fallback:
        log.warning("slot %d: station windows share no slot; spreading over their union", t)
        start, stop = min(s.window.start for s in active), max(s.window.stop for s in active)
    window = range(start, stop)
    base_w = base_kw[start:stop]
    cap = None if cap_kw is None else np.maximum(np.broadcast_to(cap_kw, base_w.shape), base_w)
    if cap is not None and demand > ((cap - base_w).sum() * slot_hours) * (1 + 1e-12):
        if not fallback:
            union = range(min(s.window.start for s in active), max(s.window.stop for s in active))
            if len(union) > len(window):
                log.warning("slot %d: demand does not fit under the cap on the common window; using the union", t)
                window = union
                base_w = base_kw[union.start:union.stop]
                cap = np.maximum(np.broadcast_to(cap_kw, base_w.shape), base_w)
                fallback = True
        if demand > ((cap - base_w).sum() * slot_hours) * (1 + 1e-12):
            cap = None  # cannot honour the cap; plan flat above it
    z = flat_level(demand, base_w, slot_hours, cap)
    level = float(z[base_w < z].max()) if np.any(base_w < z) else float(base_w.min())
    return LccmResult(z, window, fallback, level)


# ---------------------------------------------------------------------------
# convenience phase: ring bisection


@dataclass(frozen=True)
class RingMessage:
    u_min: float
    p_char: float
    b_char: float  # -inf when no EV sits below the threshold
    i_char: int  # -1 when none

    @property
    def payload(self) -> tuple:
        return (self.u_min, self.p_char, self.b_char, self.i_char)


@dataclass
class BisectionState:
    h: float = 1.0
    l: float = 0.0
    epsilon: float = 1e-4
    iterations: int = 0
    spills: int = 0

    def __post_init__(self):
        if self.l > self.h:
            raise ValueError("need l <= h")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def converged(self) -> bool:
        return self.h - self.l < self.epsilon


def scaled(u: float) -> float:
    return u / (1.0 + u)


def unscaled(s: float) -> float:
    return math.inf if s >= 1.0 else s / (1.0 - s)


@dataclass(frozen=True)
class Threshold:
    """Priority key: EVs with ``(u, -id) >= (u_value, -tie_id)`` sit above it."""

    s: float  # on the u/(1+u) scale
    u_value: float
    tie_id: float = math.inf

    @classmethod
    def at(cls, s: float) -> "Threshold":
        return cls(s, unscaled(s), math.inf)


@dataclass
class StationCandidates:
    """One station's EVs as seen by its SA for the current slot (kW)."""

    station: int
    ids: np.ndarray
    u: np.ndarray
    cap_kw: np.ndarray  # min(p_max, residual / slot_hours)
    floor_kw: np.ndarray
    p_min_kw: np.ndarray = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids)
        self.u = np.asarray(self.u, dtype=float)
        self.cap_kw = np.asarray(self.cap_kw, dtype=float)
        self.floor_kw = np.minimum(np.asarray(self.floor_kw, dtype=float), self.cap_kw)
        self.p_min_kw = np.zeros(len(self.ids)) if self.p_min_kw is None else np.asarray(self.p_min_kw, float)


class SubAggregator:
    """One station's SA in the ring. Holds only its own EVs."""

    def __init__(self, cands: StationCandidates):
        self.c = cands
        self.skipped = np.zeros(len(cands.ids), dtype=bool)

    def above(self, th: Threshold) -> np.ndarray:
        c = self.c
        up = (c.u > th.u_value) | ((c.u == th.u_value) & (c.ids <= th.tie_id))
        return up & ~self.skipped

    def step(self, th: Threshold, msg: RingMessage) -> tuple:
        """Add this station's committed power and best EV below the threshold.

        Returns the outgoing message and the priority key of ``b_char``.
        """
        c = self.c
        up = self.above(th)
        p = msg.p_char + math.fsum(c.cap_kw[up]) + math.fsum(c.floor_kw[~up])
        b, i = msg.b_char, msg.i_char
        cand = ~up & ~self.skipped & (c.cap_kw > c.floor_kw)
        if np.any(cand):
            # highest u, then lowest id
            k = np.flatnonzero(cand)[np.lexsort((c.ids[cand], -c.u[cand]))[0]]
            if c.u[k] > b or (c.u[k] == b and c.ids[k] < i):
                b, i = float(c.u[k]), int(c.ids[k])
        return RingMessage(th.u_value, p, b, i)

    def owns(self, ev_id: int) -> Optional[int]:
        hit = np.flatnonzero(self.c.ids == ev_id)
        return int(hit[0]) if len(hit) else None

    def rates(self, th: Threshold, i_char: int, residual_kw: float) -> np.ndarray:
        c = self.c
        up = self.above(th)
        r = np.where(up, c.cap_kw, c.floor_kw)
        k = self.owns(i_char)
        if k is not None:
            r[k] = c.floor_kw[k] + residual_kw
        return r


@dataclass
class DucmResult:
    rates_kw: list  # per station, aligned with its candidates
    threshold: Threshold
    state: BisectionState
    i_char: int
    unused_kw: float
    u_min: float  # lowest u among EVs charged above their floor (nan if none)

    def rate_of(self, stations: Sequence[StationCandidates]) -> dict:
        return {int(i): float(r) for s, rs in zip(stations, self.rates_kw) for i, r in zip(s.ids, rs)}


def ducm(headroom_kw: float, stations: Sequence[StationCandidates], epsilon: float = 1e-4,
         p_band_kw: Optional[float] = None, bus: Optional[MessageBus] = None,
         max_iterations: int = 10_000) -> DucmResult:
    """Ring bisection for the convenience threshold.

    ``p_band_kw`` is the width of the acceptance band (the largest rate cap
    among the candidates by default). Stations are visited in the order given.
    """
    if headroom_kw < 0:
        raise ValueError("headroom must be non-negative")
    sas = [SubAggregator(s) for s in stations]
    M = len(sas)
    if p_band_kw is None:
        p_band_kw = max((float(s.cap_kw.max()) for s in stations if len(s.ids)), default=0.0)
    floors = math.fsum(math.fsum(s.floor_kw) for s in stations)
    if floors > headroom_kw * (1 + 1e-9) + 1e-12:
        raise ValueError(f"floors ({floors:.6g} kW) exceed the headroom ({headroom_kw:.6g} kW)")

    st = BisectionState(1.0, 0.0, epsilon)
    hi, lo = Threshold.at(1.0), Threshold.at(0.0)
    hi_msg = None  # ring result at the current upper bound, if known

    def ring(th: Threshold) -> RingMessage:
        if st.iterations >= max_iterations:
            raise RuntimeError("ring bisection did not terminate")
        st.iterations += 1
        msg = RingMessage(th.u_value, 0.0, -math.inf, -1)
        for k, agent in enumerate(sas):
            msg = agent.step(th, msg)
            if bus is not None:
                nxt = sa(stations[(k + 1) % M].station)
                bus.send(sa(stations[k].station), nxt, "ring", msg.payload)
                bus.receive(nxt, "ring")
        return msg

    def locate(ev_id):
        for a in sas:
            k = a.owns(ev_id)
            if k is not None:
                return a, k
        raise KeyError(ev_id)

    while True:
        final = hi.s - lo.s < epsilon
        if final:
            th = hi
            msg = hi_msg if hi_msg is not None else ring(th)
        else:
            th = Threshold.at(0.5 * (hi.s + lo.s))
            msg = ring(th)
        residual = headroom_kw - msg.p_char
        if not final and residual < -RATE_TOL * max(1.0, headroom_kw):
            lo, st.l = th, th.s
            continue
        if not final and residual > p_band_kw:
            hi, hi_msg, st.h = th, msg, th.s
            continue
        # inside the band, or the bounds have met: settle here unless i_char cannot take the rest
        residual = max(residual, 0.0)
        if msg.i_char < 0 or residual <= RATE_TOL:
            break
        owner, k = locate(msg.i_char)
        room = owner.c.cap_kw[k] - owner.c.floor_kw[k]
        if residual > room + RATE_TOL:
            # i_char charges fully; look further down
            hi = Threshold(scaled(msg.b_char), msg.b_char, msg.i_char)
        elif owner.c.floor_kw[k] + residual < owner.c.p_min_kw[k] and residual < room:
            owner.skipped[k] = True  # rate would fall below p_min: leave it at its floor
            hi = th
        else:
            break
        st.spills += 1
        st.h, hi_msg = hi.s, None

    residual = max(headroom_kw - msg.p_char, 0.0)
    give, target = 0.0, -1
    if msg.i_char >= 0 and residual > RATE_TOL:
        owner, k = locate(msg.i_char)
        give = min(residual, owner.c.cap_kw[k] - owner.c.floor_kw[k])
        target = msg.i_char
    rates = [a.rates(th, target, give) for a in sas]
    charged = [float(u) for s, r in zip(stations, rates) for u, x, f in zip(s.u, r, s.floor_kw) if x > f]
    return DucmResult(rates, th, st, target, residual - give, min(charged) if charged else float("nan"))


# ---------------------------------------------------------------------------
# orchestration


def station_candidates(scenario: Scenario, state: FleetState, sets, t: int):
    """Per-station candidate arrays plus the fleet rows they refer to."""
    h = scenario.grid.slot_hours
    out, rows = [], []
    residual_all = state.residual_kwh(scenario)
    for m, members in enumerate(sets.by_station):
        members = list(members)
        evs = [scenario.evs[i] for i in members]
        residual = residual_all[members]
        p_max = np.array([e.p_max_kw for e in evs])
        left = np.array([e.deadline_slot - t for e in evs], dtype=int)
        u = convenience_values(scenario, state.soc, members, t) if members else np.zeros(0)
        out.append(StationCandidates(m, np.array([e.id for e in evs], dtype=int), u,
                                     np.minimum(p_max, residual / h), floor_rates(residual, p_max, left, h),
                                     np.array([e.p_min_kw for e in evs])))
        rows.append(members)
    return out, rows


def alap_profile(scenario: Scenario, state: FleetState, members, window: range) -> tuple:
    """As-late-as-possible station power over the window: every EV charges at p_max in its last slots."""
    if not len(window):
        return ()
    h = scenario.grid.slot_hours
    prof = np.zeros(len(window))
    residual = state.residual_kwh(scenario)
    for i in members:
        e = scenario.evs[i]
        need = residual[i]
        j = e.deadline_slot - 1 - window.start
        while need > 1e-12 and j >= 0:
            step = min(need, e.p_max_kw * h)
            prof[j] += step / h
            need -= step
            j -= 1
    return tuple(float(x) for x in prof)


@dataclass
class DcsaDecision(SlotDecision):
    lccm: Optional[LccmResult] = None
    bisection: Optional[BisectionState] = None
    seconds: float = 0.0


def dcsa_step(scenario: Scenario, state: FleetState, t: int, forecast_kw: np.ndarray, bus: MessageBus,
              epsilon: float = 1e-4) -> DcsaDecision:
    """One slot of the distributed scheduler, with every exchange sent over ``bus``."""
    n = scenario.n_evs
    h = scenario.grid.slot_hours
    bus.t = t
    sets = active_sets(scenario, state, t)
    rates = np.zeros(n)
    if not sets.evs:
        update_soc(scenario, state, rates, t)
        return DcsaDecision(t, rates, 0.0)
    ledger = bus.ledger
    traffic = ledger.open_slot(t, [len(g) for g in sets.by_station], [len(w) for w in sets.windows])
    M = scenario.n_stations
    residual = state.residual_kwh(scenario)

    # EVs report to their SA
    for m, members in enumerate(sets.by_station):
        for i in members:
            e = scenario.evs[i]
            bus.send(ev(e.id), sa(m), "request", (e.deadline_slot, e.soc_target * e.capacity_kwh))
            bus.receive(sa(m), "request")

    t0 = time.perf_counter()
    summaries = []
    for m, members in enumerate(sets.by_station):
        s = SaSummary(m, math.fsum(residual[list(members)]), sets.windows[m],
                      alap_profile(scenario, state, members, sets.windows[m]))
        summaries.append(s)
        bus.send(sa(m), CA, "summary", s.payload)
        bus.receive(CA, "summary")

    base = np.array(forecast_kw, dtype=float)
    base[t] = scenario.base_load_kw[t]
    plan = lccm(summaries, base, t, h, scenario.peak_cap_kw)
    planned = max(float(plan.z_star_kw[0] - base[t]), 0.0) if plan.window.start == t else 0.0
    floors = math.fsum(s.floor_kw for s in summaries)
    cands, rows = station_candidates(scenario, state, sets, t)
    reachable = math.fsum(math.fsum(c.cap_kw) for c in cands)
    headroom = min(max(planned, floors), reachable)
    for m in range(M):
        bus.send(CA, sa(m), "headroom", (headroom,))
        bus.receive(sa(m), "headroom")

    p_band = max(scenario.evs[i].p_max_kw for i in sets.evs)
    res = ducm(headroom, cands, epsilon=epsilon, p_band_kw=p_band, bus=bus)
    seconds = time.perf_counter() - t0
    traffic.iterations = res.state.iterations

    selected = []
    for m, (members, r) in enumerate(zip(rows, res.rates_kw)):
        for i, x in zip(members, r):
            rates[i] = x
            bus.send(sa(m), ev(scenario.evs[i].id), "rate", (float(x),))
            bus.receive(ev(scenario.evs[i].id), "rate")
            if x > 0:
                selected.append(i)
    update_soc(scenario, state, rates, t)
    return DcsaDecision(t, rates, headroom, tuple(selected), res.u_min, res.state.iterations,
                        z_star_kw=plan.z_star_kw, window=plan.window, lccm=plan, bisection=res.state,
                        seconds=seconds)


def run_dcsa(scenario: Scenario, forecaster="seasonal-naive", epsilon: float = 1e-4, trace: bool = False):
    """Run the distributed scheduler; returns ``(Schedule, metrics, MessageLedger)``."""
    from .metrics import summarize

    forecast_kw = resolve_base_forecast(scenario, forecaster)
    state = FleetState.initial(scenario)
    ledger = MessageLedger(trace=[] if trace else None)
    bus = MessageBus(ledger)
    rec = RunRecorder(scenario, "dcsa")
    for t in range(scenario.grid.horizon_slots):
        d = dcsa_step(scenario, state, t, forecast_kw, bus, epsilon)
        rec.record(d)
        if d.lccm is not None and d.lccm.fallback:
            rec.notes.append(f"slot {t}: load plan used the union of station windows")
    schedule = rec.finish(state)
    return schedule, summarize(schedule, scenario, ledger), ledger


def run_csa_ledger(scenario: Scenario, schedule) -> MessageLedger:
    """Traffic the centralized scheduler generates on the same run (one row per slot)."""
    ledger = MessageLedger()
    state = FleetState.initial(scenario)
    for t in range(scenario.grid.horizon_slots):
        sets = active_sets(scenario, state, t)
        if sets.evs:
            ledger.open_slot(t, [len(g) for g in sets.by_station], [len(w) for w in sets.windows])
            for m, members in enumerate(sets.by_station):
                for i in members:
                    name = ev(scenario.evs[i].id)
                    ledger.record(t, name, sa(m), "request", EV_TO_SA)
                    ledger.record(t, sa(m), CA, "ev-data", CSA_SA_TO_CA)
                    ledger.record(t, CA, sa(m), "rate", CSA_CA_TO_SA)
                    ledger.record(t, sa(m), name, "rate", SA_TO_EV)
        update_soc(scenario, state, schedule.rates_kw[:, t], t)
    return ledger


def reconcile(ledger: MessageLedger, method: str = "dcsa") -> list:
    """Slots whose recorded traffic differs from the closed form (empty when consistent)."""
    bad = []
    for s in ledger.slots:
        if method == "dcsa":
            want = dcsa_slot_units(s.n_by_station, s.window_lens, s.iterations)
        else:
            want = csa_slot_units(s.n_by_station)
        got = {k: s.counts.get(k, 0) for k in MessageLedger.LINKS}
        if got != want:
            bad.append((s.t, got, want))
    return bad

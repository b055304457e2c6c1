"""Time grid, EV/station data model, fleet bookkeeping and scenario generation.

Slots are 0-based: slot ``t`` covers ``[origin + t*slot_minutes, origin + (t+1)*slot_minutes)``.
An EV is parked for slots ``arrival_slot .. deadline_slot`` and may draw power in
slots ``arrival_slot <= t < deadline_slot``; it leaves at the start of ``deadline_slot``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SOC_TOL = 1e-9

DEFAULT_STATION_SHARES = (0.05, 0.10, 0.15, 0.15, 0.20, 0.35)

# EV count -> (daily base-load peak kW, cap on total load kW)
PEAK_TABLE = {
    100: (400.0, 800.0),
    200: (800.0, 1200.0),
    300: (1200.0, 1600.0),
    400: (1600.0, 2000.0),
    2000: (8000.0, 11000.0),
}


class ScenarioError(ValueError):
    """Raised for malformed scenarios, configurations or fleet updates."""


@dataclass(frozen=True)
class TimeGrid:
    horizon_slots: int = 96
    slot_minutes: int = 15
    origin: str = "18:00"

    def __post_init__(self):
        if self.horizon_slots < 1:
            raise ScenarioError("horizon_slots must be >= 1")
        if self.slot_minutes < 1 or 1440 % self.slot_minutes:
            raise ScenarioError("slot_minutes must be a positive divisor of 1440")

    @property
    def slot_hours(self) -> float:
        return self.slot_minutes / 60.0

    @property
    def slots_per_day(self) -> int:
        return 1440 // self.slot_minutes

    def slot_of(self, clock: str) -> int:
        """Slot index of a wall-clock time, counting forward from ``origin`` (wraps midnight)."""
        minutes = (_clock_minutes(clock) - _clock_minutes(self.origin)) % 1440
        return minutes // self.slot_minutes

    def label(self, t: int) -> str:
        minutes = (_clock_minutes(self.origin) + t * self.slot_minutes) % 1440
        return f"{minutes // 60:02d}:{minutes % 60:02d}"


def _clock_minutes(clock: str) -> int:
    hh, mm = clock.split(":")
    return int(hh) * 60 + int(mm)


@dataclass(frozen=True)
class EvRequest:
    id: int
    station: int
    arrival_slot: int
    deadline_slot: int
    soc_init: float
    soc_target: float = 1.0
    capacity_kwh: float = 30.0
    p_max_kw: float = 6.6
    p_min_kw: float = 0.0

    @property
    def demand_kwh(self) -> float:
        return (self.soc_target - self.soc_init) * self.capacity_kwh

    def max_deliverable_kwh(self, slot_hours: float) -> float:
        return self.p_max_kw * slot_hours * (self.deadline_slot - self.arrival_slot)

    def validate(self, grid: Optional[TimeGrid] = None) -> None:
        if not 0.0 <= self.soc_init <= self.soc_target <= 1.0:
            raise ScenarioError(f"EV {self.id}: need 0 <= soc_init <= soc_target <= 1")
        if self.arrival_slot >= self.deadline_slot:
            raise ScenarioError(f"EV {self.id}: arrival_slot must precede deadline_slot")
        if self.arrival_slot < 0:
            raise ScenarioError(f"EV {self.id}: negative arrival_slot")
        if not 0.0 <= self.p_min_kw <= self.p_max_kw or self.p_max_kw <= 0:
            raise ScenarioError(f"EV {self.id}: need 0 <= p_min_kw <= p_max_kw, p_max_kw > 0")
        if self.capacity_kwh <= 0:
            raise ScenarioError(f"EV {self.id}: capacity_kwh must be positive")
        if grid is not None:
            if self.deadline_slot >= grid.horizon_slots:
                raise ScenarioError(f"EV {self.id}: deadline beyond the horizon")
            if self.demand_kwh > self.max_deliverable_kwh(grid.slot_hours) * (1 + 1e-12):
                raise ScenarioError(f"EV {self.id}: demand exceeds deliverable energy before deadline")


@dataclass(frozen=True)
class Scenario:
    grid: TimeGrid
    evs: tuple
    base_load_kw: np.ndarray
    price_k0: float = 1e-4
    price_k1: float = 1.2e-4
    peak_cap_kw: Optional[float] = None
    station_shares: tuple = DEFAULT_STATION_SHARES
    history_kw: Optional[np.ndarray] = None  # (days, slots_per_day), same scaling as base load
    seed: Optional[int] = None

    def __post_init__(self):
        base = np.asarray(self.base_load_kw, dtype=float)
        base.setflags(write=False)
        object.__setattr__(self, "base_load_kw", base)
        object.__setattr__(self, "evs", tuple(self.evs))
        object.__setattr__(self, "station_shares", tuple(float(s) for s in self.station_shares))
        if self.history_kw is not None:
            hist = np.atleast_2d(np.asarray(self.history_kw, dtype=float))
            hist.setflags(write=False)
            object.__setattr__(self, "history_kw", hist)
        self.validate()

    @property
    def n_evs(self) -> int:
        return len(self.evs)

    @property
    def n_stations(self) -> int:
        return len(self.station_shares)

    def validate(self) -> None:
        if self.base_load_kw.shape != (self.grid.horizon_slots,):
            raise ScenarioError("base_load_kw length must equal horizon_slots")
        if np.any(self.base_load_kw < 0):
            raise ScenarioError("base load must be non-negative")
        if self.peak_cap_kw is not None and self.peak_cap_kw < self.base_load_kw.max():
            raise ScenarioError("peak_cap_kw below the maximum base load")
        if self.price_k0 < 0 or self.price_k1 <= 0:
            raise ScenarioError("need k0 >= 0 and k1 > 0")
        ids = [ev.id for ev in self.evs]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate EV ids")
        for ev in self.evs:
            ev.validate(self.grid)
            if not 0 <= ev.station < self.n_stations:
                raise ScenarioError(f"EV {ev.id}: unknown station {ev.station}")


def peak_settings(n_evs: int) -> tuple:
    """(base-load peak kW, total-load cap kW) for a fleet size.

    Table rows are used verbatim; other sizes interpolate linearly and scale
    proportionally outside the tabulated range.
    """
    if n_evs in PEAK_TABLE:
        return PEAK_TABLE[n_evs]
    ns = sorted(PEAK_TABLE)
    if n_evs < ns[0] or n_evs > ns[-1]:
        ref = ns[0] if n_evs < ns[0] else ns[-1]
        peak, cap = PEAK_TABLE[ref]
        return peak * n_evs / ref, cap * n_evs / ref
    peak = float(np.interp(n_evs, ns, [PEAK_TABLE[n][0] for n in ns]))
    cap = float(np.interp(n_evs, ns, [PEAK_TABLE[n][1] for n in ns]))
    return peak, cap


# ---------------------------------------------------------------------------
# fleet state


@dataclass
class FleetState:
    """Mutable per-run bookkeeping. Row ``i`` refers to ``scenario.evs[i]``."""

    soc: np.ndarray
    finished_slot: list
    availability: np.ndarray  # (N, T) bool, filled in as the run advances
    missed: set = field(default_factory=set)

    @classmethod
    def initial(cls, scenario: Scenario) -> "FleetState":
        n, T = scenario.n_evs, scenario.grid.horizon_slots
        soc = np.array([ev.soc_init for ev in scenario.evs], dtype=float)
        finished: list = [None] * n
        for i, ev in enumerate(scenario.evs):
            if ev.soc_init >= ev.soc_target - SOC_TOL:
                finished[i] = ev.arrival_slot
        state = cls(soc=soc, finished_slot=finished, availability=np.zeros((n, T), dtype=bool))
        return state

    def copy(self) -> "FleetState":
        return FleetState(self.soc.copy(), list(self.finished_slot), self.availability.copy(), set(self.missed))

    def residual_kwh(self, scenario: Scenario) -> np.ndarray:
        target = np.array([ev.soc_target for ev in scenario.evs])
        cap = np.array([ev.capacity_kwh for ev in scenario.evs])
        return np.maximum(target - self.soc, 0.0) * cap


def is_present(ev: EvRequest, finished: Optional[int], t: int) -> bool:
    if not ev.arrival_slot <= t <= ev.deadline_slot:
        return False
    return finished is None or t < finished


@dataclass(frozen=True)
class ActiveSets:
    by_station: tuple  # per station: tuple of EV row indices (H_{m,t})
    windows: tuple  # per station: range of slots (W_{m,t}), empty range when idle

    @property
    def evs(self) -> tuple:
        return tuple(sorted(i for h in self.by_station for i in h))

    @property
    def window(self) -> range:
        ends = [w.stop for w in self.windows if len(w)]
        starts = [w.start for w in self.windows if len(w)]
        if not ends:
            return range(0)
        return range(min(starts), max(ends))


def active_sets(scenario: Scenario, state: FleetState, t: int) -> ActiveSets:
    """EVs that can still draw power at slot ``t``, grouped by station, with sliding windows.

    Rows of ``state.availability`` for slot ``t`` are written as a side effect.
    """
    if not 0 <= t < scenario.grid.horizon_slots:
        raise ScenarioError(f"slot {t} outside the horizon")
    groups: list = [[] for _ in range(scenario.n_stations)]
    for i, ev in enumerate(scenario.evs):
        present = is_present(ev, state.finished_slot[i], t)
        state.availability[i, t] = present
        if present and t < ev.deadline_slot and state.soc[i] < ev.soc_target - SOC_TOL:
            groups[ev.station].append(i)
    windows = []
    for members in groups:
        if members:
            last = max(scenario.evs[i].deadline_slot for i in members)
            windows.append(range(t, last + 1))
        else:
            windows.append(range(t, t))
    return ActiveSets(tuple(tuple(g) for g in groups), tuple(windows))


def update_soc(scenario: Scenario, state: FleetState, rates_kw: np.ndarray, t: int) -> FleetState:
    """Apply one slot of charging in place and return ``state``.

    EVs whose SOC reaches the target get ``finished_slot = t + 1``.
    """
    h = scenario.grid.slot_hours
    rates_kw = np.asarray(rates_kw, dtype=float)
    if rates_kw.shape != (scenario.n_evs,):
        raise ScenarioError("one rate per EV required")
    if np.any(rates_kw < 0):
        raise ScenarioError("negative charging rate (discharge is not modelled)")
    for i in np.flatnonzero(rates_kw):
        ev = scenario.evs[i]
        if not ev.arrival_slot <= t < ev.deadline_slot or state.finished_slot[i] is not None:
            raise ScenarioError(f"EV {ev.id} charged at slot {t} outside its stay")
        if rates_kw[i] > ev.p_max_kw * (1 + 1e-12):
            raise ScenarioError(f"EV {ev.id} charged above p_max")
        new = state.soc[i] + rates_kw[i] * h / ev.capacity_kwh
        if new > 1.0 + SOC_TOL:
            raise ScenarioError(f"EV {ev.id} would exceed full charge ({new:.12f})")
        if abs(new - ev.soc_target) <= SOC_TOL:
            new = ev.soc_target
        if new >= ev.soc_target:
            state.finished_slot[i] = t + 1
        state.soc[i] = min(new, 1.0)
    return state


# ---------------------------------------------------------------------------
# schedules


@dataclass
class Schedule:
    """Outcome of a run: the N x T rate matrix plus per-slot load decisions (all kW)."""

    method: str
    rates_kw: np.ndarray
    base_kw: np.ndarray
    headroom_kw: np.ndarray
    finished_slot: list
    soc_final: np.ndarray
    u_min: np.ndarray = None
    iterations: np.ndarray = None
    cost: Optional[float] = None  # J1 accumulated slot by slot during the run
    notes: list = field(default_factory=list)

    @property
    def total_load_kw(self) -> np.ndarray:
        return self.base_kw + self.rates_kw.sum(axis=0)


# ---------------------------------------------------------------------------
# scenario generation


@dataclass
class GeneratorConfig:
    station_shares: tuple = DEFAULT_STATION_SHARES
    capacity_kwh: float = 30.0
    p_max_kw: float = 6.6
    p_min_kw: float = 0.0
    soc_target: float = 1.0
    horizon_slots: int = 96
    slot_minutes: int = 15
    origin: str = "18:00"
    # arrivals and departures fall inside 18:00-07:00, most of the night parked
    arrival_window: tuple = ("18:00", "19:00")
    deadline_window: tuple = ("06:00", "07:00")
    price_k0: float = 1e-4
    price_k1: float = 1.2e-4
    peak_kw: Optional[float] = None  # None -> looked up by fleet size
    peak_cap_kw: Optional[float] = None
    use_peak_cap: bool = True
    history_days: int = 14
    load_noise: float = 0.02
    forecaster: str = "seasonal-naive"
    max_resample: int = 10_000

    def validate(self) -> None:
        shares = np.asarray(self.station_shares, dtype=float)
        if shares.ndim != 1 or len(shares) == 0 or np.any(shares < 0):
            raise ScenarioError("station shares must be a non-empty list of non-negative fractions")
        if abs(shares.sum() - 1.0) > 1e-9:
            raise ScenarioError(f"station shares sum to {shares.sum()}, expected 1")

    def replace(self, **changes) -> "GeneratorConfig":
        return dataclasses.replace(self, **changes)


def station_counts(n_evs: int, shares: Sequence[float]) -> list:
    """Split ``n_evs`` across stations by share (largest-remainder rounding)."""
    raw = np.asarray(shares, dtype=float) * n_evs
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for k in order[: n_evs - counts.sum()]:
        counts[k] += 1
    return counts.tolist()


def generate_scenario(seed: int, n_evs: int, config: Optional[GeneratorConfig] = None) -> Scenario:
    """Random scenario in the style of the evaluation setup, deterministic in ``seed``."""
    from .forecast import get_forecaster, scale_to_peak, synthetic_load_history

    config = config or GeneratorConfig()
    config.validate()
    if n_evs < 0:
        raise ScenarioError("n_evs must be >= 0")
    grid = TimeGrid(config.horizon_slots, config.slot_minutes, config.origin)
    rng = np.random.default_rng(seed)
    h = grid.slot_hours

    a_lo, a_hi = grid.slot_of(config.arrival_window[0]), grid.slot_of(config.arrival_window[1])
    d_lo, d_hi = grid.slot_of(config.deadline_window[0]), grid.slot_of(config.deadline_window[1])
    if not (a_lo <= a_hi and d_lo <= d_hi and a_lo < d_hi and d_hi < grid.horizon_slots):
        raise ScenarioError("arrival/deadline windows inconsistent with the grid")

    counts = station_counts(n_evs, config.station_shares)
    stations = np.repeat(np.arange(len(counts)), counts)
    evs = []
    for i, m in enumerate(stations):
        for _ in range(config.max_resample):
            arrival = int(rng.integers(a_lo, a_hi + 1))
            deadline = int(rng.integers(max(d_lo, arrival + 1), d_hi + 1))
            soc0 = float(rng.uniform(0.0, 1.0))
            demand = (config.soc_target - soc0) * config.capacity_kwh
            if soc0 <= config.soc_target and demand <= config.p_max_kw * h * (deadline - arrival):
                break
        else:
            raise ScenarioError("could not draw a feasible EV; check the configuration")
        evs.append(EvRequest(i, int(m), arrival, deadline, soc0, config.soc_target,
                             config.capacity_kwh, config.p_max_kw, config.p_min_kw))

    table_peak, table_cap = peak_settings(max(n_evs, 1))
    peak = config.peak_kw if config.peak_kw is not None else table_peak
    cap = config.peak_cap_kw if config.peak_cap_kw is not None else table_cap

    spd = grid.slots_per_day
    ahead = -(-grid.horizon_slots // spd)
    days = synthetic_load_history(config.history_days + ahead, grid, rng, noise=config.load_noise)
    history = days[: config.history_days]
    actual = days[config.history_days:].ravel()[: grid.horizon_slots]
    forecast = get_forecaster(config.forecaster)(history, grid.horizon_slots)
    factor = scale_to_peak(forecast, peak).values_kw.max() / float(forecast.values_kw.max())
    base = actual * factor
    if config.use_peak_cap and cap < base.max():
        cap = float(base.max())
    return Scenario(
        grid=grid,
        evs=tuple(evs),
        base_load_kw=base,
        price_k0=config.price_k0,
        price_k1=config.price_k1,
        peak_cap_kw=cap if config.use_peak_cap else None,
        station_shares=tuple(config.station_shares),
        history_kw=history * factor,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# text serialization
#
# Layout (version 1): a header line, then sections. ``[scenario]`` holds
# ``key = value`` pairs; ``[base_load_kw]``, ``[evs]`` and ``[history_kw]`` are
# whitespace tables whose first row names the columns. Floats are written
# with ``repr`` so a save/load round trip is exact.

SCENARIO_HEADER = "# evsched-scenario v1"
EV_COLUMNS = ("id", "station", "arrival_slot", "deadline_slot", "soc_init", "soc_target",
              "capacity_kwh", "p_max_kw", "p_min_kw")


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_scenario(scenario: Scenario) -> str:
    g = scenario.grid
    out = [SCENARIO_HEADER, "[scenario]"]
    meta = [
        ("horizon_slots", g.horizon_slots),
        ("slot_minutes", g.slot_minutes),
        ("origin", g.origin),
        ("price_k0", float(scenario.price_k0)),
        ("price_k1", float(scenario.price_k1)),
        ("peak_cap_kw", None if scenario.peak_cap_kw is None else float(scenario.peak_cap_kw)),
        ("station_shares", ",".join(repr(float(s)) for s in scenario.station_shares)),
        ("seed", scenario.seed),
    ]
    out += [f"{k} = {_fmt(v)}" for k, v in meta]
    out += ["", "[base_load_kw]", "t load_kw"]
    out += [f"{t} {float(v)!r}" for t, v in enumerate(scenario.base_load_kw)]
    out += ["", "[evs]", " ".join(EV_COLUMNS)]
    for ev in scenario.evs:
        out.append(" ".join(_fmt(getattr(ev, c)) for c in EV_COLUMNS))
    if scenario.history_kw is not None:
        out += ["", "[history_kw]", "day t load_kw"]
        for d, day in enumerate(scenario.history_kw):
            out += [f"{d} {t} {float(v)!r}" for t, v in enumerate(day)]
    return "\n".join(out) + "\n"


def parse_sections(text: str, header: str) -> dict:
    """Split a sectioned text file into ``{name: [lines]}`` (comments and blanks dropped)."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != header:
        raise ScenarioError(f"expected header {header!r}")
    sections: dict = {}
    current = None
    for n, raw in enumerate(lines[1:], 2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current in sections:
                raise ScenarioError(f"line {n}: duplicate section [{current}]")
            sections[current] = []
        elif current is None:
            raise ScenarioError(f"line {n}: content before the first section")
        else:
            sections[current].append(line)
    return sections


def parse_pairs(lines) -> dict:
    pairs = {}
    for line in lines:
        if "=" not in line:
            raise ScenarioError(f"expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        pairs[k] = v
    return pairs


def _opt(v: str, cast):
    return None if v == "none" else cast(v)


def loads_scenario(text: str) -> Scenario:
    sec = parse_sections(text, SCENARIO_HEADER)
    for name in ("scenario", "base_load_kw", "evs"):
        if name not in sec:
            raise ScenarioError(f"missing section [{name}]")
    meta = parse_pairs(sec["scenario"])
    try:
        grid = TimeGrid(int(meta["horizon_slots"]), int(meta["slot_minutes"]), meta["origin"])
        base_rows = [r.split() for r in sec["base_load_kw"][1:]]
        base = np.array([float(r[1]) for r in base_rows])
        if [int(r[0]) for r in base_rows] != list(range(len(base_rows))):
            raise ScenarioError("base load rows out of order")
        cols = sec["evs"][0].split()
        if tuple(cols) != EV_COLUMNS:
            raise ScenarioError(f"EV columns must be {' '.join(EV_COLUMNS)}")
        evs = []
        for row in sec["evs"][1:]:
            v = row.split()
            evs.append(EvRequest(int(v[0]), int(v[1]), int(v[2]), int(v[3]), float(v[4]), float(v[5]),
                                 float(v[6]), float(v[7]), float(v[8])))
        history = None
        if "history_kw" in sec:
            rows = [r.split() for r in sec["history_kw"][1:]]
            n_days = int(rows[-1][0]) + 1 if rows else 0
            history = np.array([float(r[2]) for r in rows]).reshape(n_days, -1)
        return Scenario(
            grid=grid,
            evs=tuple(evs),
            base_load_kw=base,
            price_k0=float(meta["price_k0"]),
            price_k1=float(meta["price_k1"]),
            peak_cap_kw=_opt(meta["peak_cap_kw"], float),
            station_shares=tuple(float(s) for s in meta["station_shares"].split(",")),
            history_kw=history,
            seed=_opt(meta.get("seed", "none"), int),
        )
    except (KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario file: {exc}") from exc


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_scenario(scenario))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return loads_scenario(fh.read())

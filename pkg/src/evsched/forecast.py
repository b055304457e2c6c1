"""Base-load forecasting baselines, peak scaling, MAPE and a synthetic load history.

A forecaster is any callable ``(history, horizon) -> ForecastSeries`` where
``history`` is a ``(days, slots_per_day)`` array. Register extra strategies
(an ARIMA wrapper, say) with :func:`register_forecaster`.

History text format (version 1)::

    # evsched-history v1
    # slot_minutes=15 origin=18:00
    <day> <HH:MM> <load_kw>
    ...

One sample per line, days in order, slots in order within each day.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

HISTORY_HEADER = "# evsched-history v1"


@dataclass(frozen=True)
class ForecastSeries:
    values_kw: np.ndarray
    source: str = "unknown"

    def __post_init__(self):
        v = np.asarray(self.values_kw, dtype=float)
        if v.ndim != 1:
            raise ValueError("forecast must be one-dimensional")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("forecast values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values_kw", v)

    @property
    def horizon(self) -> int:
        return len(self.values_kw)


def _as_history(history) -> np.ndarray:
    hist = np.atleast_2d(np.asarray(history, dtype=float))
    if hist.size == 0 or hist.shape[0] < 1:
        raise ValueError("history must cover at least one full season")
    return hist


def _tile(day: np.ndarray, horizon: int) -> np.ndarray:
    reps = -(-horizon // len(day))
    return np.tile(day, reps)[:horizon]


def seasonal_naive(history, horizon: int) -> ForecastSeries:
    """Repeat the most recent season."""
    hist = _as_history(history)
    return ForecastSeries(_tile(hist[-1], horizon), "seasonal-naive")


def previous_days_average(history, horizon: int, days: int | None = None) -> ForecastSeries:
    """Per-slot mean over the last ``days`` seasons (all of them by default)."""
    hist = _as_history(history)
    if days is not None:
        if days < 1:
            raise ValueError("days must be >= 1")
        hist = hist[-days:]
    return ForecastSeries(_tile(hist.mean(axis=0), horizon), "previous-days-average")


_REGISTRY: Dict[str, Callable] = {
    "seasonal-naive": seasonal_naive,
    "previous-days-average": previous_days_average,
}


def register_forecaster(name: str, fn: Callable) -> None:
    _REGISTRY[name] = fn


def get_forecaster(name: str) -> Callable:
    try:
        return _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY) + ["perfect"])
        raise ValueError(f"unknown forecaster {name!r} (known: {known})") from None


def forecaster_names() -> list:
    return sorted(_REGISTRY) + ["perfect"]


def forecast(history, strategy: str, horizon: int) -> ForecastSeries:
    return get_forecaster(strategy)(history, horizon)


def scale_to_peak(series: ForecastSeries, peak_kw: float) -> ForecastSeries:
    """Rescale so the series peaks at exactly ``peak_kw``."""
    peak = float(series.values_kw.max(initial=0.0))
    if peak <= 0:
        raise ValueError("cannot scale an all-zero forecast")
    if peak == peak_kw:
        return series
    scaled = series.values_kw * (peak_kw / peak)
    scaled[np.argmax(series.values_kw)] = peak_kw
    return ForecastSeries(scaled, series.source)


def mape(forecast_kw, actual_kw) -> float:
    """Mean absolute percentage error as a fraction."""
    f = np.asarray(getattr(forecast_kw, "values_kw", forecast_kw), dtype=float)
    a = np.asarray(getattr(actual_kw, "values_kw", actual_kw), dtype=float)
    if f.shape != a.shape:
        raise ValueError("forecast and actual lengths differ")
    bad = np.flatnonzero(a <= 0)
    if len(bad):
        raise ValueError(f"actual load must be positive; slot {int(bad[0])} is {a[bad[0]]}")
    return float(np.mean(np.abs(f - a) / a))


def daily_profile(grid, evening_peak: str = "19:00", morning_peak: str = "08:30",
                  trough: float = 0.55, morning_level: float = 0.85, width_h: float = 2.5) -> np.ndarray:
    """Smooth double-peak day (max 1) sampled on the grid, starting at the grid origin."""
    spd = grid.slots_per_day
    hours = (np.arange(spd) + 0.5) * grid.slot_minutes / 60.0 + _hours(grid.origin)

    def bump(center_h):
        d = (hours - center_h + 12.0) % 24.0 - 12.0
        return np.exp(-0.5 * (d / width_h) ** 2)

    # night trough near 04:00
    night = bump(_hours("04:00"))
    shape = 1.0 - (1.0 - trough) * night
    shape = shape * (0.8 + 0.2 * bump(_hours(evening_peak)) + 0.2 * morning_level * bump(_hours(morning_peak)))
    return shape / shape.max()


def _hours(clock: str) -> float:
    hh, mm = clock.split(":")
    return int(hh) + int(mm) / 60.0


def synthetic_load_history(n_days: int, grid, rng: np.random.Generator, noise: float = 0.02,
                           day_jitter: float = 0.03) -> np.ndarray:
    """``(n_days, slots_per_day)`` double-peak load in arbitrary units.

    Each day is the base profile times a random day level, plus seeded
    multiplicative noise.
    """
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    base = daily_profile(grid)
    level = 1.0 + day_jitter * rng.standard_normal((n_days, 1))
    eps = noise * rng.standard_normal((n_days, len(base)))
    return np.maximum(base * level * (1.0 + eps), 1e-6)


def write_history(history, grid, path_or_buf) -> None:
    hist = _as_history(history)
    lines = [HISTORY_HEADER, f"# slot_minutes={grid.slot_minutes} origin={grid.origin}"]
    for d, day in enumerate(hist):
        for t, v in enumerate(day):
            lines.append(f"{d} {grid.label(t)} {float(v)!r}")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w") as fh:
            fh.write(text)


def read_history(path_or_buf, grid) -> np.ndarray:
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf) as fh:
            text = fh.read()
    rows = []
    header_seen = False
    for n, line in enumerate(io.StringIO(text), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line == HISTORY_HEADER:
                header_seen = True
            elif "slot_minutes=" in line:
                meta = dict(kv.split("=", 1) for kv in line[1:].split())
                if int(meta["slot_minutes"]) != grid.slot_minutes or meta.get("origin", grid.origin) != grid.origin:
                    raise ValueError("history grid does not match the scenario grid")
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {n}: expected '<day> <HH:MM> <load_kw>'")
        rows.append((int(parts[0]), parts[1], float(parts[2])))
    if not header_seen:
        raise ValueError("missing history header")
    spd = grid.slots_per_day
    if not rows or len(rows) % spd:
        raise ValueError(f"history must hold whole days of {spd} samples")
    for k, (d, clock, _) in enumerate(rows):
        if d != k // spd or clock != grid.label(k % spd):
            raise ValueError(f"sample {k + 1} out of order ({d} {clock})")
    return np.array([r[2] for r in rows]).reshape(-1, spd)

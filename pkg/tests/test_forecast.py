import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evsched.core import TimeGrid
from evsched.forecast import (ForecastSeries, daily_profile, forecast, forecaster_names, get_forecaster, mape,
                              previous_days_average, read_history, register_forecaster, scale_to_peak,
                              seasonal_naive, synthetic_load_history, write_history)


def test_seasonal_naive_periodic_history_is_exact():
    day = np.linspace(1.0, 2.0, 96)
    hist = np.tile(day, (5, 1))
    f = seasonal_naive(hist, 96)
    assert mape(f, day) == 0.0


def test_constant_history():
    hist = np.full((4, 96), 3.5)
    for name in ("seasonal-naive", "previous-days-average"):
        np.testing.assert_array_equal(forecast(hist, name, 96).values_kw, 3.5)


def test_previous_days_average_with_offsets():
    day = np.linspace(1.0, 2.0, 96)
    offsets = np.arange(7.0)
    hist = day + offsets[:, None]
    np.testing.assert_allclose(previous_days_average(hist, 96).values_kw, day + 3.0)
    np.testing.assert_allclose(previous_days_average(hist, 96, days=2).values_kw, day + 5.5)


def test_horizon_longer_than_a_day_tiles():
    hist = np.arange(4.0).reshape(1, 4) + 1
    assert seasonal_naive(hist, 6).values_kw.tolist() == [1, 2, 3, 4, 1, 2]


def test_scale_to_peak():
    s = scale_to_peak(ForecastSeries(np.array([1.0, 2.0, 4.0])), 400.0)
    np.testing.assert_allclose(s.values_kw, [100.0, 200.0, 400.0])
    same = ForecastSeries(np.array([1.0, 400.0]))
    assert scale_to_peak(same, 400.0) is same
    with pytest.raises(ValueError):
        scale_to_peak(ForecastSeries(np.zeros(3)), 10.0)


def test_mape_hand_values():
    actual = np.array([10.0, 20.0, 40.0])
    assert mape(actual, actual) == 0.0
    assert mape(1.1 * actual, actual) == pytest.approx(0.10, abs=1e-12)
    with pytest.raises(ValueError):
        mape(actual, np.array([1.0, 0.0, 2.0]))
    with pytest.raises(ValueError):
        mape(actual[:2], actual)


def test_registry():
    assert "seasonal-naive" in forecaster_names() and "perfect" in forecaster_names()
    with pytest.raises(ValueError, match="known"):
        get_forecaster("arima")
    register_forecaster("flat-test", lambda h, n: ForecastSeries(np.full(n, float(np.mean(h)))))
    assert forecast(np.ones((2, 4)), "flat-test", 3).values_kw.tolist() == [1.0, 1.0, 1.0]


def test_forecast_series_validation():
    with pytest.raises(ValueError):
        ForecastSeries(np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        ForecastSeries(np.array([[1.0]]))


def test_daily_profile_shape():
    grid = TimeGrid()
    p = daily_profile(grid)
    assert p.max() == pytest.approx(1.0)
    # evening peak near 19:00, trough at night
    assert np.argmax(p) in range(grid.slot_of("18:00"), grid.slot_of("20:30"))
    assert np.argmin(p) in range(grid.slot_of("02:00"), grid.slot_of("06:00"))


def test_synthetic_history_deterministic():
    grid = TimeGrid()
    a = synthetic_load_history(3, grid, np.random.default_rng(1))
    b = synthetic_load_history(3, grid, np.random.default_rng(1))
    assert a.shape == (3, 96)
    np.testing.assert_array_equal(a, b)
    assert np.all(a > 0)


def test_history_round_trip():
    grid = TimeGrid()
    hist = synthetic_load_history(2, grid, np.random.default_rng(3))
    buf = io.StringIO()
    write_history(hist, grid, buf)
    buf.seek(0)
    np.testing.assert_array_equal(read_history(buf, grid), hist)


def test_history_grid_mismatch_rejected():
    buf = io.StringIO()
    write_history(np.ones((1, 96)), TimeGrid(), buf)
    buf.seek(0)
    with pytest.raises(ValueError):
        read_history(buf, TimeGrid(48, 30))


@given(st.lists(st.floats(0.1, 1e4), min_size=1, max_size=50), st.floats(0.5, 2.0))
def test_mape_of_uniform_error(actual, factor):
    a = np.asarray(actual)
    assert mape(a * factor, a) == pytest.approx(abs(factor - 1.0), rel=1e-9, abs=1e-12)


@given(st.lists(st.floats(0.0, 1e4), min_size=1, max_size=50), st.floats(1.0, 1e4))
def test_scale_to_peak_hits_peak(values, peak):
    v = np.asarray(values)
    if v.max() <= 0:
        return
    s = scale_to_peak(ForecastSeries(v), peak)
    assert s.values_kw.max() == peak

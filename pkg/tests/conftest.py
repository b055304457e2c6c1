import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from evsched.core import EvRequest, Scenario, TimeGrid  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def tiny_scenario(evs, base, slot_minutes=15, shares=(1.0,), cap=None):
    """Small scenario on a grid one slot longer than the last deadline needs."""
    horizon = len(base)
    return Scenario(TimeGrid(horizon, slot_minutes), tuple(evs), np.asarray(base, dtype=float),
                    station_shares=shares, peak_cap_kw=cap)


def ev_with_units(i, arrival, deadline, units, unit_kwh, station=0, capacity=30.0, p_max=6.6):
    """EV whose demand is an exact number of ``unit_kwh`` steps."""
    return EvRequest(i, station, arrival, deadline, 1.0 - units * unit_kwh / capacity,
                     capacity_kwh=capacity, p_max_kw=p_max)


@pytest.fixture
def grid():
    return TimeGrid()


@pytest.fixture(scope="session")
def scenario200():
    from evsched.core import generate_scenario

    return generate_scenario(7, 200)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)

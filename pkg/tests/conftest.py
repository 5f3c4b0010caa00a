import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from h2rail.pipeline import run_concurrent, run_sequential  # noqa: E402
from h2rail.powertrain import (BatteryParams, TrainParams, default_fuelcell_map, default_motor_map,  # noqa: E402
                               fit_all)
from h2rail.route import RouteProfile, discretize, synthetic_route  # noqa: E402
from h2rail.simulator import simulate  # noqa: E402

DEFAULT_TAU = 800.0


@pytest.fixture(scope="session")
def params():
    return TrainParams()


@pytest.fixture(scope="session")
def batt():
    return BatteryParams()


@pytest.fixture(scope="session")
def maps(params):
    return default_motor_map(params), default_fuelcell_map(params)


@pytest.fixture(scope="session")
def fits(params, batt, maps):
    return fit_all(params, batt, *maps)


@pytest.fixture(scope="session")
def default_grid():
    return discretize(synthetic_route(10_000, 3, 0).with_target_time(DEFAULT_TAU), 10.0)


@pytest.fixture(scope="session")
def concurrent_run(default_grid, params, batt, fits):
    return run_concurrent(default_grid, params, batt, fits)


@pytest.fixture(scope="session")
def sequential_run(default_grid, params, batt, fits):
    return run_sequential(default_grid, params, batt, fits)


@pytest.fixture(scope="session")
def concurrent_report(concurrent_run, default_grid, params, batt, maps, fits):
    return simulate(concurrent_run.traj, default_grid, params, batt, *maps, fits)


@pytest.fixture(scope="session")
def sequential_report(sequential_run, default_grid, params, batt, maps, fits):
    return simulate(sequential_run.traj, default_grid, params, batt, *maps, fits)


def flat_route(length, limit, stations, target_time=None):
    return RouteProfile(length, ((0.0, 0.0),), ((0.0, length, limit),), tuple(stations), target_time)


@pytest.fixture(scope="session")
def small_grid():
    """Flat 2 km line with one intermediate stop, 50 m intervals."""
    r = flat_route(2000.0, 20.0, ((0.0, 10.0), (1000.0, 20.0), (2000.0, 0.0)), 500.0)
    return discretize(r, 50.0)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def verdicts(pytestconfig):
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    lines = pytestconfig.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

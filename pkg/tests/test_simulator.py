import dataclasses
import math

import numpy as np
import pytest

from conftest import flat_route
from h2rail.powertrain import H2_LHV, MapRangeError
from h2rail.route import discretize
from h2rail.simulator import (SimulationError, SimulationReport, braking_onsets, compare, regen_events,
                              simulate)
from h2rail.trajectory import Trajectories


def _still(grid, v=None, **over):
    n, K = grid.n, grid.N
    v = np.full(n, math.sqrt(grid.z_stop)) if v is None else v
    base = dict(v=v, z=v**2, zeta=np.full(n, 50.0), gamma=1 / v, dzeta=np.zeros(K), omega=np.zeros(K),
                f_m=np.zeros(K), f_brk=np.zeros(K), f_fc=np.full(K, 6e3) / v[:-1], f_batt=np.zeros(K),
                ds=grid.ds.copy(), position=grid.position.copy())
    base.update(over)
    return Trajectories(**base)


@pytest.fixture(scope="module")
def flat_grid():
    return discretize(flat_route(500.0, 20.0, (), 1e4), 10.0)


def test_zero_controls_stall(flat_grid, params, batt, maps):
    rep = simulate(_still(flat_grid), flat_grid, params, batt, *maps)
    assert any(kind == "stall" for kind, _, _ in rep.violations)
    assert not rep.ok
    assert np.all(rep.v >= 0)


def test_no_forces_conserve_kinetic_energy(flat_grid, params, batt, maps):
    frictionless = dataclasses.replace(params, a=0.0, b=0.0, c=0.0)
    v = np.full(flat_grid.n, 10.0)
    traj = _still(flat_grid, v=v, f_fc=np.full(flat_grid.N, 6e3 / 10.0))
    # start already moving: the pinned origin is only a formulation condition
    rep = simulate(traj, flat_grid, frictionless, batt, *maps)
    np.testing.assert_allclose(rep.v, 10.0, rtol=1e-14)
    assert rep.v_rms_rel < 1e-14


def test_replay_matches_optimiser(concurrent_report, concurrent_run, default_grid):
    rep = concurrent_report
    assert rep.ok, rep.violations[:5]
    assert rep.v_rms_rel < 1e-4
    assert abs(rep.soc_drift_pp) <= 0.5
    assert rep.journey_time_s == pytest.approx(default_grid.target_time, rel=1e-6)
    # exact fuel close to the linear surrogate the optimiser saw
    assert rep.fuel_j == pytest.approx(rep.fuel_surrogate_j, rel=0.05)
    assert rep.fuel_kg == pytest.approx(rep.fuel_j / H2_LHV)


def test_determinism(concurrent_run, default_grid, params, batt, maps, fits):
    a = simulate(concurrent_run.traj, default_grid, params, batt, *maps, fits)
    b = simulate(concurrent_run.traj, default_grid, params, batt, *maps, fits)
    assert a.to_csv() == b.to_csv()
    assert a.to_text() == b.to_text()


def test_soc_follows_battery_power_sign(concurrent_report):
    rep = concurrent_report
    d = np.diff(rep.soc)
    assert np.all(d[rep.p_batt > 1.0] < 0)
    assert np.all(d[rep.p_batt < -1.0] > 0)


def test_compare_self_is_zero(concurrent_report, params, default_grid):
    cmp = compare(concurrent_report, concurrent_report, params, default_grid)
    assert cmp.fuel_delta_j == 0.0 and cmp.fuel_delta_pct == 0.0
    assert cmp.regen_only_in_b == []


def test_compare_rejects_other_route(concurrent_report, params, batt, maps, default_grid, flat_grid):
    other = simulate(_still(flat_grid), flat_grid, params, batt, *maps)
    with pytest.raises(SimulationError):
        compare(concurrent_report, other, params, default_grid)


def test_trajectory_grid_mismatch(concurrent_run, flat_grid, params, batt, maps):
    with pytest.raises(SimulationError):
        simulate(concurrent_run.traj, flat_grid, params, batt, *maps)


def test_fuel_cell_command_outside_map(flat_grid, params, batt, maps):
    v = np.full(flat_grid.n, 10.0)
    traj = _still(flat_grid, v=v, f_fc=np.full(flat_grid.N, 2 * params.p_fc_max / 10.0))
    with pytest.raises(MapRangeError):
        simulate(traj, flat_grid, params, batt, *maps)


def test_regen_clipped_to_battery(params, batt, maps):
    grid = discretize(flat_route(200.0, 30.0, (), 1e3), 10.0)
    v = np.full(grid.n, 25.0)
    K = grid.N
    # full regeneration at 25 m/s returns more than the battery accepts
    f_m = np.full(K, params.f_m_min)
    traj = _still(grid, v=v, f_m=f_m, f_fc=np.full(K, params.p_fc_max / 25.0))
    rep = simulate(traj, grid, params, batt, *maps)
    assert np.all(rep.p_batt >= batt.p_min * (1 + 1e-6))
    moved = rep.f_m - f_m
    assert np.all(moved[1:] > 0)
    np.testing.assert_allclose(rep.f_brk, -moved, rtol=1e-12)


def _report(f_m, dt=1.0, arrivals=(), ds=10.0, v=None, f_brk=None):
    K = len(f_m)
    f_m = np.asarray(f_m, float)
    t = np.concatenate(([0.0], np.cumsum(np.full(K, dt))))
    v = np.full(K + 1, ds / dt) if v is None else np.asarray(v, float)
    zeros = np.zeros(K)
    return SimulationReport("x", 0.0, 0.0, 0.0, 0.0, np.full(K + 1, 50.0), 0.0, t[-1], t[-1], v, 0.0, 0.0,
                            f_m, zeros if f_brk is None else np.asarray(f_brk, float), zeros, zeros, zeros,
                            zeros, t, np.arange(K + 1) * ds, tuple(arrivals))


def test_regen_event_requires_resumed_traction(params):
    F = params.f_m_max
    slow_then_go = [F / 2] * 5 + [-F / 2] * 3 + [0.0] * 5 + [F / 2] * 5
    assert regen_events(_report(slow_then_go), params) == [(5, 7)]
    # traction resumes too late
    late = [F / 2] * 5 + [-F / 2] * 3 + [0.0] * 40 + [F / 2] * 5
    assert regen_events(_report(late), params) == []
    # a stop intervenes
    stop = [F / 2] * 5 + [-F / 2] * 3 + [0.0] * 2 + [F / 2] * 5
    assert regen_events(_report(stop, arrivals=(9,)), params) == []
    # small negative forces are not regeneration
    assert regen_events(_report([F / 2] * 5 + [-0.005 * F] * 3 + [F / 2] * 5), params) == []


def test_braking_onset_spans(params, small_grid):
    grid = dataclasses.replace(small_grid)
    n = 12
    pinned = np.zeros(n, bool)
    pinned[-1] = True
    g = dataclasses.replace(grid, pinned=pinned, dwell_mask=np.zeros(n, bool), ds=np.full(n - 1, 10.0),
                            position=np.arange(n) * 10.0)
    v = np.linspace(12.0, 0.1, n)
    lo = params.f_m_min
    # abrupt: coasting and then immediately at the limit
    abrupt = _report([0.0] * 6 + [lo] * 5, v=v, arrivals=(n - 1,))
    spans, reached = braking_onsets(abrupt, params, g)
    assert spans == [1] and reached == [True]
    # gradual ramp into the limit
    ramp = _report([0.0] * 3 + list(np.linspace(0.1, 1.0, 6) * lo) + [lo] * 2, v=v, arrivals=(n - 1,))
    spans, reached = braking_onsets(ramp, params, g)
    assert spans[0] >= 3 and reached == [True]
    # mechanical braking counts as reaching the bound
    mech = _report([0.0] * 4 + [0.3 * lo] * 7, v=v, f_brk=[0.0] * 6 + [-5e4] * 5, arrivals=(n - 1,))
    spans, reached = braking_onsets(mech, params, g)
    assert spans == [3] and reached == [True]

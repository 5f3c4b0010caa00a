import dataclasses
import math

import numpy as np
import pytest

from conftest import flat_route
from h2rail.formulation import (CONCURRENT_FAMILIES, EMS_FAMILIES, SPEED_FAMILIES, FormulationError,
                                InfeasibleByConstruction, Weights, build_concurrent, build_ems_given_speed,
                                build_speed_only, check_time, reachable_time_bound)
from h2rail.pipeline import run_concurrent, run_sequential
from h2rail.powertrain import fit_all
from h2rail.route import discretize
from h2rail.solver import INFEASIBLE, OPTIMAL, solve


@pytest.fixture(scope="module")
def tiny_grid():
    # 30 m, no stations: nodes 0 and 3 pinned at rest, three 10 m intervals
    return discretize(flat_route(30.0, 20.0, (), 200.0), 10.0)


def test_hand_count_concurrent(tiny_grid, params, batt, fits):
    prog, vm = build_concurrent(tiny_grid, params, batt, fits)
    n, K = 4, 3
    assert (tiny_grid.n, tiny_grid.N) == (n, K)
    # 4 node fields on 4 nodes, 6 interval fields on 3 intervals
    assert vm.n_physical == 4 * n + 6 * K == 34
    # gamma^2 epigraph on the free nodes, omega^2 epigraph per interval
    assert prog.n == 34 + (n - 1) + K == 40
    assert vm.is_bijection()
    # equalities: dyn 3, soc 3, omega 3, time 1, term z0 zN zeta0 zetaN, pin vN gammaN
    assert prog.A.shape[0] == 3 + 3 + 3 + 1 + 4 + 2 == 16
    # orthant: vb 3, zb 2x2 (unpinned nodes 1, 2), socb 2x2, fmb/brkb/pm/pbatt/pfc 6 each
    assert prog.dims.l == 3 + 4 + 4 + 5 * 6 == 41
    # relaxed cones vz, vgam, batt on n-1 samples, traction cones, two epigraphs
    assert prog.n_cones == 3 * (n - 1) + K + (n - 1) + K == 18
    assert set(prog.dims.q) == {3}


def test_hand_count_speed_only(tiny_grid, params):
    prog, vm = build_speed_only(tiny_grid, params)
    assert vm.n_physical == 3 * 4 + 2 * 3 == 18
    assert set(vm.slots) == {"v", "z", "gamma", "f_m", "f_brk"}
    assert prog.n == 18 + 3
    assert prog.n_cones == 3 * 3


@pytest.mark.parametrize("builder,families", [
    ("concurrent", CONCURRENT_FAMILIES), ("speed", SPEED_FAMILIES)])
def test_family_coverage(small_grid, params, batt, fits, builder, families):
    if builder == "concurrent":
        prog, _ = build_concurrent(small_grid, params, batt, fits)
    else:
        prog, _ = build_speed_only(small_grid, params)
    counts = prog.coverage(families + ("dwell", "pin"))
    assert all(v > 0 for v in counts.values())


def test_family_coverage_ems(small_grid, params, batt, fits):
    sp = run_sequential(small_grid, params, batt, fits).programs["ems"]
    counts = sp.coverage(EMS_FAMILIES)
    assert all(v > 0 for v in counts.values())


def test_coverage_audit_raises_on_missing(tiny_grid, params):
    prog, _ = build_speed_only(tiny_grid, params)
    with pytest.raises(AssertionError, match="soc"):
        prog.coverage(("dyn", "soc"))


def test_brake_force_is_free(small_grid, params, batt, fits):
    for prog, vm in (build_concurrent(small_grid, params, batt, fits), build_speed_only(small_grid, params)):
        assert np.all(prog.c[vm.slots["f_brk"]] == 0.0)


def test_inverse_speed_cone_boundary(tiny_grid, params, batt, fits):
    prog, vm = build_concurrent(tiny_grid, params, batt, fits)
    rows = prog.row_labels["vgam"][1]
    x = np.zeros(prog.n)
    node = 1

    def cone_at(v, g):
        x[vm.slots["v"][node]] = v / prog.var_scale[vm.slots["v"][node]]
        x[vm.slots["gamma"][node]] = g / prog.var_scale[vm.slots["gamma"][node]]
        s = (prog.h - prog.G @ x)[rows].reshape(-1, 3)[node]
        return s[0] - np.linalg.norm(s[1:])

    assert cone_at(2.0, 0.5) == pytest.approx(0.0, abs=1e-12)
    assert cone_at(2.0, 0.6) > 0
    assert cone_at(2.0, 0.4) < 0


def test_infeasible_target_time(params, batt, fits):
    r = flat_route(1000.0, 20.0, ((0.0, 10.0), (1000.0, 0.0)), 40.0)
    grid = discretize(r, 50.0)
    with pytest.raises(InfeasibleByConstruction) as err:
        build_concurrent(grid, params, batt, fits)
    assert err.value.lower_bound > 40.0
    with pytest.raises(InfeasibleByConstruction):
        build_speed_only(grid, params)


def test_reachable_bound_catches_slow_departure(params):
    # the first driving interval after a dwell is covered near rest, which the
    # plain speed-limit bound ignores
    r = flat_route(500.0, 20.0, ((0.0, 5.0), (500.0, 0.0)), 100.0)
    grid = discretize(r, 25.0)
    assert grid.time_lower_bound() < 100.0 < reachable_time_bound(grid, params)
    with pytest.raises(InfeasibleByConstruction):
        check_time(grid, params)


def test_reachable_bound_is_a_bound(small_grid, params, batt, fits):
    lb = reachable_time_bound(small_grid, params)
    assert small_grid.time_lower_bound() <= lb
    tight = discretize(flat_route(2000.0, 20.0, ((0.0, 10.0), (1000.0, 20.0), (2000.0, 0.0)),
                                  math.ceil(lb * 1.1)), 50.0)
    res = solve(build_speed_only(tight, params)[0])
    assert res.status == OPTIMAL


def _scaled_instance(params, batt, maps, k):
    pk = dataclasses.replace(params, m=params.m * k)
    bk = dataclasses.replace(batt, q_wh=batt.q_wh * k)
    return pk, bk, fit_all(pk, bk, *maps), Weights(k, k)


@pytest.mark.parametrize("k", [0.8, 1.5])
def test_scaling_consistency(params, batt, maps, fits, k):
    # distance, time, inertia, battery capacity and auxiliary weights scaled together
    r = flat_route(1000.0, 20.0, ((0.0, 10.0), (1000.0, 0.0)), 250.0)
    grid = discretize(r, 50.0)
    assert grid.N == 25
    base = run_concurrent(grid, params, batt, fits).traj
    pk, bk, fk, w = _scaled_instance(params, batt, maps, k)
    scaled = run_concurrent(grid.scaled(k), pk, bk, fk, w).traj
    np.testing.assert_allclose(scaled.v, base.v, atol=1e-4)
    np.testing.assert_allclose(scaled.zeta, base.zeta, atol=1e-4)
    np.testing.assert_allclose(scaled.gamma, base.gamma, rtol=1e-4)


def test_scaling_distance_alone_changes_profile(params, batt, fits):
    # with force limits and drag held fixed, stretching the line is a different problem
    r = flat_route(1000.0, 20.0, ((0.0, 10.0), (1000.0, 0.0)), 250.0)
    grid = discretize(r, 50.0)
    base = run_concurrent(grid, params, batt, fits).traj
    other = run_concurrent(grid.scaled(1.5), params, batt, fits).traj
    assert np.abs(other.v - base.v).max() > 0.1


def test_speed_only_shape(params):
    r = flat_route(3000.0, 20.0, ((0.0, 10.0), (3000.0, 0.0)), 280.0)
    grid = discretize(r, 25.0)
    prog, vm = build_speed_only(grid, params)
    res = solve(prog)
    assert res.optimal
    x = prog.physical_x(res.x)
    v, fm, fb = x[vm.slots["v"]], x[vm.slots["f_m"]], x[vm.slots["f_brk"]]
    drive = np.flatnonzero(grid.driving_intervals)
    peak = drive[np.argmax(v[drive])]
    # accelerate at the start, cruise in the middle, brake at the end
    assert fm[drive[1]] > 0.5 * params.f_m_max
    mid = drive[(drive > drive[0] + 40) & (drive < drive[-1] - 40)]
    assert np.ptp(v[mid]) < 0.05 * v[mid].mean()
    tail = drive[drive > peak]
    assert np.all(np.diff(v[tail]) <= 1e-6)
    # braking is postponed and reaches the bound
    total = fm + fb
    first_brake = drive[np.argmax(total[drive] < -1e3)]
    assert first_brake > drive[-1] - 0.2 * drive.size
    lo = np.maximum(params.f_m_min, params.p_m_min * x[vm.slots["gamma"]][:-1])
    assert np.any(fm[tail] <= lo[tail] * 0.99)


def _zero_demand_profile(grid, fits, v0=8.0):
    v = np.where(grid.pinned, math.sqrt(grid.z_stop), v0)
    z = v**2
    q = fits.motor
    zk = z[:-1]
    # force at which the fitted electric demand vanishes, root nearest zero
    a2, a1, a0 = q.p02, q.p01 + q.p11 * zk, q.p00 + q.p10 * zk + q.p20 * zk**2
    disc = np.sqrt(a1**2 - 4 * a2 * a0)
    f = np.where(abs(a2) > 0, (-a1 + disc) / (2 * a2), -a0 / a1)
    assert np.allclose(q(f, zk), 0.0, atol=1e-6 * abs(q.p01) * 1e3)
    return {"v": v, "z": z, "gamma": 1 / v, "f_m": f, "f_brk": np.zeros(grid.N)}


def test_ems_zero_demand(params, batt, fits):
    r = flat_route(1000.0, 20.0, (), None)
    grid = discretize(r.with_target_time(1e4), 50.0)
    fixed = _zero_demand_profile(grid, fits)
    grid = dataclasses.replace(grid, target_time=float(fixed["gamma"][:-1] @ grid.ds))
    p0 = dataclasses.replace(params, p_aux=0.0)
    prog, vm = build_ems_given_speed(grid, p0, batt, fits, fixed)
    res = solve(prog)
    assert res.optimal
    d = vm.gather(prog.physical_x(res.x))
    g = fixed["gamma"][:-1]
    np.testing.assert_allclose(d["f_fc"], params.p_fc_min * g, rtol=1e-5)
    assert d["zeta"][-1] == pytest.approx(batt.soc0, abs=1e-9)
    assert np.all((d["zeta"] >= batt.soc_min - 1e-6) & (d["zeta"] <= batt.soc_max + 1e-6))
    # the fuel-cell floor is more than the load needs; whatever the battery does
    # along the way, it ends where it started and loses energy doing so
    assert np.all(params.n_fc * d["f_fc"] + d["f_batt"] > -1e-6 * params.n_fc * d["f_fc"])
    assert d["omega"].sum() >= -1e-9


def test_ems_overload_infeasible(params, batt, fits):
    r = flat_route(1000.0, 20.0, (), None)
    grid = discretize(r.with_target_time(1e4), 50.0)
    fixed = _zero_demand_profile(grid, fits, v0=15.0)
    fixed["f_m"] = np.where(grid.pinned[:-1], fixed["f_m"], params.f_m_max)
    # 87 kN at 15 m/s is 1.3 MW, above four fuel cells plus the battery
    assert params.f_m_max * 15.0 > params.n_fc * params.p_fc_max + batt.p_max
    grid = dataclasses.replace(grid, target_time=float(fixed["gamma"][:-1] @ grid.ds))
    prog, _ = build_ems_given_speed(grid, params, batt, fits, fixed)
    assert solve(prog).status == INFEASIBLE


def test_ems_rejects_profile_off_rest(small_grid, params, batt, fits):
    fixed = _zero_demand_profile(small_grid, fits)
    fixed["z"] = fixed["z"].copy()
    fixed["z"][np.flatnonzero(small_grid.pinned)[1]] = 4.0
    with pytest.raises(FormulationError, match="rest"):
        build_ems_given_speed(small_grid, params, batt, fits, fixed)


def test_ems_rejects_overspeed(small_grid, params, batt, fits):
    fixed = _zero_demand_profile(small_grid, fits, v0=25.0)
    with pytest.raises(FormulationError, match="limit"):
        build_ems_given_speed(small_grid, params, batt, fits, fixed)


def test_ems_fuel_not_below_concurrent(concurrent_report, sequential_report):
    assert sequential_report.fuel_surrogate_j >= concurrent_report.fuel_surrogate_j
    assert sequential_report.fuel_j >= concurrent_report.fuel_j


def test_concurrent_objective_not_above_sequential(concurrent_run, sequential_run):
    conc = concurrent_run.traj.objective
    # the sequential composite is feasible for the joint program; its joint objective is larger
    assert sequential_run.traj.objective >= conc * (1 - 1e-6)


def test_zero_origin_dwell_crawls(params):
    r = flat_route(1000.0, 20.0, ((0.0, 0.0), (1000.0, 0.0)), None)
    grid = discretize(r.with_target_time(1.0), 10.0)
    # the first interval is entered at rest and covered at sqrt(z_stop)
    assert grid.time_lower_bound() >= 10.0 / math.sqrt(grid.z_stop)

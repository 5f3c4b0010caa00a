"""Open-loop replay of optimised controls through the exact powertrain models.

The replay applies the optimised motor and brake forces to the exact
kinetic-energy recursion (Davis drag evaluated at the simulated speed), looks
the motor efficiency up in its map, follows the fuel-cell power command, and
lets the battery balance the DC link.  State of charge follows the exact
open-circuit-voltage/resistance model.  Interval durations are the optimiser's
``gamma * ds``; the duration implied by the simulated speed is reported too.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .powertrain import (H2_LHV, BatteryDomainError, BatteryParams, FuelCellMap, MapRangeError, MotorMap,
                         TrainParams, exact_soc_rate)
from .route import SpatialGrid
from .trajectory import Trajectories

REPORT_COLUMNS = ("i", "s_m", "t_s", "v_sim_mps", "v_opt_mps", "zeta_sim_pct", "zeta_opt_pct", "F_m_n",
                  "F_brk_n", "P_elec_w", "P_fc_w", "P_batt_w", "fuel_j")


class SimulationError(ValueError):
    pass


@dataclass
class SimulationReport:
    label: str
    fuel_j: float
    fuel_kg: float
    fuel_per_km_j: float
    fuel_surrogate_j: float
    soc: np.ndarray
    soc_drift_pp: float
    journey_time_s: float
    journey_time_speed_s: float
    v: np.ndarray
    v_rms_rel: float
    soc_max_dev_pp: float
    f_m: np.ndarray            # applied motor force after regeneration clipping
    f_brk: np.ndarray
    p_elec: np.ndarray
    p_fc: np.ndarray
    p_batt: np.ndarray
    fuel: np.ndarray           # per-interval hydrogen energy
    t: np.ndarray
    position: np.ndarray
    arrivals: tuple[int, ...]
    violations: list[tuple[str, int, float]] = field(default_factory=list)
    traj: Trajectories | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> dict[str, float | str | int]:
        return {
            "label": self.label,
            "fuel_j": self.fuel_j,
            "fuel_kg_h2": self.fuel_kg,
            "fuel_per_km_j": self.fuel_per_km_j,
            "fuel_surrogate_j": self.fuel_surrogate_j,
            "soc_initial_pct": float(self.soc[0]),
            "soc_final_pct": float(self.soc[-1]),
            "soc_drift_pp": self.soc_drift_pp,
            "soc_max_dev_vs_optimizer_pp": self.soc_max_dev_pp,
            "journey_time_s": self.journey_time_s,
            "journey_time_from_speed_s": self.journey_time_speed_s,
            "v_rms_rel_dev": self.v_rms_rel,
            "violations": len(self.violations),
        }

    def to_text(self, header_lines: tuple[str, ...] = ()) -> str:
        out = [f"# {h}" for h in header_lines]
        for k, v in self.summary().items():
            out.append(f"{k} = {v:.10g}" if isinstance(v, float) else f"{k} = {v}")
        for kind, idx, val in self.violations[:50]:
            out.append(f"violation {kind} at {idx} value {val:.6g}")
        if len(self.violations) > 50:
            out.append(f"violation ... {len(self.violations) - 50} more")
        return "\n".join(out) + "\n"

    def to_csv(self, header_lines: tuple[str, ...] = ()) -> str:
        buf = io.StringIO()
        for h in header_lines:
            buf.write(f"# {h}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        tr = self.traj
        n = self.v.size

        def pad(a):
            return np.concatenate((a, [0.0]))

        cols = [self.position, self.t, self.v, tr.v if tr is not None else np.full(n, np.nan), self.soc,
                tr.zeta if tr is not None else np.full(n, np.nan), pad(self.f_m), pad(self.f_brk),
                pad(self.p_elec), pad(self.p_fc), pad(self.p_batt), pad(self.fuel)]
        for i in range(n):
            w.writerow([i] + [f"{c[i]:.10g}" for c in cols])
        return buf.getvalue()


def _arrivals(grid: SpatialGrid) -> tuple[int, ...]:
    """Node index of each stop arrival after the origin."""
    arr = []
    for k in np.flatnonzero(grid.pinned | grid.dwell_mask):
        if k > 0 and not (grid.pinned[k - 1] or grid.dwell_mask[k - 1]):
            arr.append(int(k))
    return tuple(arr)


def simulate(traj: Trajectories, grid: SpatialGrid, params: TrainParams, batt: BatteryParams,
             motor_map: MotorMap, fc_map: FuelCellMap, fits=None, tol: float = 1e-3,
             label: str | None = None) -> SimulationReport:
    if traj.n != grid.n:
        raise SimulationError(f"trajectory has {traj.n} nodes, grid has {grid.n}")
    n, K = grid.n, grid.N
    kk = 2.0 * grid.ds / params.m_eq
    drive = grid.driving_intervals
    dt = traj.gamma[:-1] * grid.ds
    z = np.empty(n)
    z[0] = traj.z[0]
    soc = np.empty(n)
    soc[0] = batt.soc0
    f_m = traj.f_m.astype(float).copy()
    f_brk = traj.f_brk.astype(float).copy()
    p_elec, p_fc, p_batt, fuel = (np.zeros(K) for _ in range(4))
    violations: list[tuple[str, int, float]] = []
    vmin_map, vmax_map = motor_map.speed[0], motor_map.speed[-1]
    for k in range(K):
        v = math.sqrt(max(z[k], 0.0))
        f_ext = 0.0
        if drive[k]:
            f_ext = params.a + params.b * v + params.c * v * v + params.m * params.g * math.sin(grid.theta[k])
        z[k + 1] = z[k] + kk[k] * (f_m[k] + f_brk[k] - f_ext)
        if z[k + 1] <= 0.0:
            violations.append(("stall", k + 1, z[k + 1]))
            z[k + 1] = 0.0
        vm = min(max(v, vmin_map), vmax_map)
        if f_m[k] < motor_map.force[0] - 1e-6 * abs(motor_map.force[0]) or \
                f_m[k] > motor_map.force[-1] + 1e-6 * abs(motor_map.force[-1]):
            raise MapRangeError(f"motor force {f_m[k]:.6g} N at interval {k} is outside the map")
        fm_k = float(np.clip(f_m[k], motor_map.force[0], motor_map.force[-1]))
        # fuel cell follows its power command; clip tiny excursions from solver tolerance
        cmd = traj.f_fc[k] / traj.gamma[k]
        lo, hi = fc_map.power[0], fc_map.power[-1]
        if cmd < lo * (1 - tol) or cmd > hi * (1 + tol):
            raise MapRangeError(f"fuel-cell power {cmd:.6g} W at interval {k} is outside the map")
        p_fc[k] = min(max(cmd, lo), hi)
        fuel[k] = params.n_fc * p_fc[k] / float(fc_map.efficiency(p_fc[k])) * dt[k]
        pe = float(motor_map.electric_force(fm_k, vm)) * v
        pb = pe + params.p_aux - params.n_fc * p_fc[k]
        if pb < batt.p_min and fm_k < 0:
            # battery cannot take all regenerated power: shift the excess to the mechanical brake
            fm_new = _regen_limit(fm_k, vm, v, params, batt, p_fc[k], motor_map)
            f_brk[k] += fm_k - fm_new
            fm_k = fm_new
            pe = float(motor_map.electric_force(fm_k, vm)) * v
            pb = pe + params.p_aux - params.n_fc * p_fc[k]
        f_m[k] = fm_k
        p_elec[k] = pe
        p_batt[k] = pb
        if pb > batt.p_max * (1 + tol) or pb < batt.p_min * (1 + tol):
            violations.append(("battery-power", k, pb))
        try:
            rate = float(exact_soc_rate(pb, batt))
        except BatteryDomainError:
            raise SimulationError(f"battery power {pb:.6g} W at interval {k} exceeds the cell capability") from None
        soc[k + 1] = soc[k] + rate * dt[k]
    v_sim = np.sqrt(np.maximum(z, 0.0))
    for k in np.flatnonzero(v_sim[:-1] > grid.v_max[:-1] * (1 + tol) + 1e-9):
        violations.append(("speed-limit", int(k), float(v_sim[k])))
    for k in np.flatnonzero((soc < batt.soc_min - tol) | (soc > batt.soc_max + tol)):
        violations.append(("soc-bounds", int(k), float(soc[k])))

    drive_nodes = ~(grid.pinned | grid.dwell_mask)
    if drive_nodes.any():
        rel = (v_sim[drive_nodes] - traj.v[drive_nodes]) / np.maximum(traj.v[drive_nodes], 1e-9)
        v_rms = float(np.sqrt(np.mean(rel**2)))
    else:
        v_rms = 0.0
    fuel_j = float(fuel.sum())
    fuel_sur = float("nan")
    if fits is not None:
        fuel_sur = float(params.n_fc * (fits.fuel_cell(traj.f_fc, traj.z[:K]) * grid.ds).sum())
    t = np.concatenate(([0.0], np.cumsum(dt)))
    speed_time = float(np.sum(grid.ds / np.maximum(v_sim[:-1], 1e-9)))
    return SimulationReport(
        label=label if label is not None else traj.label,
        fuel_j=fuel_j, fuel_kg=fuel_j / H2_LHV, fuel_per_km_j=fuel_j / (grid.total_length / 1000.0),
        fuel_surrogate_j=fuel_sur, soc=soc, soc_drift_pp=float(soc[-1] - soc[0]),
        journey_time_s=float(dt.sum()), journey_time_speed_s=speed_time,
        v=v_sim, v_rms_rel=v_rms, soc_max_dev_pp=float(np.max(np.abs(soc - traj.zeta))),
        f_m=f_m, f_brk=f_brk, p_elec=p_elec, p_fc=p_fc, p_batt=p_batt, fuel=fuel, t=t,
        position=grid.position.copy(), arrivals=_arrivals(grid), violations=violations, traj=traj,
    )


def _regen_limit(fm, vm, v, params, batt, pfc, motor_map, iters: int = 60):
    """Most negative regenerative force whose returned power the battery can still absorb."""
    def excess(f):
        return float(motor_map.electric_force(f, vm)) * v + params.p_aux - params.n_fc * pfc - batt.p_min
    lo, hi = fm, 0.0
    if excess(hi) < 0:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    return hi


# ---------------------------------------------------------------------------
# behavioural event detectors

@dataclass
class ComparisonReport:
    fuel_delta_j: float
    fuel_delta_pct: float
    soc_drift_a_pp: float
    soc_drift_b_pp: float
    regen_events_a: list[tuple[int, int]]
    regen_events_b: list[tuple[int, int]]
    regen_only_in_b: list[tuple[int, int]]
    onset_spans_a: list[int]
    onset_spans_b: list[int]
    onset_reaches_bound_a: list[bool]
    onset_reaches_bound_b: list[bool]
    label_a: str = "a"
    label_b: str = "b"

    def to_text(self, header_lines: tuple[str, ...] = ()) -> str:
        out = [f"# {h}" for h in header_lines]
        out += [
            f"compare = {self.label_a} vs {self.label_b}",
            f"fuel_saving_j = {self.fuel_delta_j:.10g}",
            f"fuel_saving_pct = {self.fuel_delta_pct:.6g}",
            f"soc_drift_{self.label_a}_pp = {self.soc_drift_a_pp:.6g}",
            f"soc_drift_{self.label_b}_pp = {self.soc_drift_b_pp:.6g}",
            f"regen_then_traction_events_{self.label_a} = {len(self.regen_events_a)}",
            f"regen_then_traction_events_{self.label_b} = {len(self.regen_events_b)}",
            f"regen_events_only_in_{self.label_b} = {len(self.regen_only_in_b)}",
            f"braking_onset_spans_{self.label_a} = {' '.join(map(str, self.onset_spans_a))}",
            f"braking_onset_spans_{self.label_b} = {' '.join(map(str, self.onset_spans_b))}",
            f"braking_reaches_bound_{self.label_a} = {' '.join(str(int(x)) for x in self.onset_reaches_bound_a)}",
            f"braking_reaches_bound_{self.label_b} = {' '.join(str(int(x)) for x in self.onset_reaches_bound_b)}",
        ]
        return "\n".join(out) + "\n"


def regen_events(rep: SimulationReport, params: TrainParams, window_s: float = 30.0,
                 eps_frac: float = 0.01) -> list[tuple[int, int]]:
    """Regenerative-braking runs followed by positive traction within ``window_s``.

    A run is a maximal stretch of intervals with motor force below
    ``-eps_frac * F_max``.  Only runs that resume traction before the next
    stop count: these slow the train without any intention of stopping.
    """
    eps = eps_frac * params.f_m_max
    fm = rep.f_m
    stops = set(rep.arrivals)
    K = fm.size
    events = []
    k = 0
    while k < K:
        if fm[k] < -eps:
            start = k
            while k < K and fm[k] < -eps:
                k += 1
            end = k - 1
            t_end = rep.t[end + 1]
            j = end + 1
            while j < K and rep.t[j] - t_end <= window_s and j not in stops:
                if fm[j] > eps:
                    events.append((start, end))
                    break
                j += 1
        else:
            k += 1
    return events


def braking_onsets(rep: SimulationReport, params: TrainParams, grid: SpatialGrid,
                   rel: float = 0.02) -> tuple[list[int], list[bool]]:
    """Samples from the onset of braking before each stop to the braking bound.

    The approach is the run of intervals without positive traction that ends
    at the stop; braking starts at its first interval with regeneration or
    mechanical braking beyond 1% of ``F_max`` from which speed falls
    monotonically to the stop.  The bound is reached when the
    motor sits within ``rel`` of its regeneration limit
    ``max(F_min, P_min * gamma)`` or the mechanical brake is engaged.  Spans
    of one or two samples count as abrupt, three or more as gradual.
    Approaches that never reach the bound report their braking length and
    ``False``.
    """
    eps = 0.01 * params.f_m_max
    g = rep.traj.gamma[:-1] if rep.traj is not None else 1.0 / np.maximum(rep.v[:-1], 1e-9)
    bound = np.maximum(params.f_m_min, params.p_m_min * g)
    at = (rep.f_m <= (1.0 - rel) * bound) | (rep.f_brk < -eps)
    spans, reached = [], []
    for arr in rep.arrivals:
        k = arr - 1
        while k >= 0 and rep.f_m[k] <= eps and not (grid.pinned[k] or grid.dwell_mask[k]):
            k -= 1
        phase = np.arange(k + 1, arr)
        if phase.size == 0:
            continue
        braking = np.flatnonzero((rep.f_m[phase] < -eps) | (rep.f_brk[phase] < -eps))
        if braking.size == 0:
            continue
        phase = phase[braking[0]:]
        # braking that merely holds speed on a descent is not part of the stop
        rising = np.flatnonzero(rep.v[phase + 1] >= rep.v[phase] * (1 - 1e-9))
        if rising.size:
            phase = phase[rising[-1] + 1:]
        if phase.size == 0:
            continue
        hit = np.flatnonzero(at[phase])
        spans.append(int(hit[0]) + 1 if hit.size else int(phase.size))
        reached.append(bool(hit.size))
    return spans, reached


def _overlaps(ev, events, position, margin):
    lo, hi = position[ev[0]] - margin, position[ev[1] + 1] + margin
    return any(position[s] <= hi and position[e + 1] >= lo for s, e in events)


def compare(a: SimulationReport, b: SimulationReport, params: TrainParams, grid: SpatialGrid,
            window_s: float = 30.0, margin_m: float = 100.0) -> ComparisonReport:
    """Fuel saving of ``a`` relative to ``b`` plus behavioural flags."""
    if a.v.size != b.v.size or not np.allclose(a.position, b.position):
        raise SimulationError("reports come from different routes")
    delta = b.fuel_j - a.fuel_j
    pct = 100.0 * delta / b.fuel_j if b.fuel_j else 0.0
    ea, eb = regen_events(a, params, window_s), regen_events(b, params, window_s)
    only_b = [ev for ev in eb if not _overlaps(ev, ea, a.position, margin_m)]
    sa, ba = braking_onsets(a, params, grid)
    sb, bb = braking_onsets(b, params, grid)
    return ComparisonReport(delta, pct, a.soc_drift_pp, b.soc_drift_pp, ea, eb, only_b, sa, sb, ba, bb,
                            a.label or "a", b.label or "b")

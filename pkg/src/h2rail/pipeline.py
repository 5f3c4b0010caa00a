"""Build, solve and extract in one call, for both pipelines."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .conic import ConicProgram
from .formulation import Weights, build_concurrent, build_ems_given_speed, build_speed_only
from .powertrain import BatteryParams, SurrogateFits, TrainParams
from .route import SpatialGrid
from .solver import SolverResult, SolverSettings, solve
from .trajectory import Trajectories, combine, extract

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, result: SolverResult):
        super().__init__(f"{stage} solve ended with status {result.status}")
        self.stage = stage
        self.result = result


@dataclass
class PipelineResult:
    traj: Trajectories
    results: dict[str, SolverResult]
    programs: dict[str, ConicProgram]
    seconds: dict[str, float] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return sum(r.iterations for r in self.results.values())


def _solve(stage, prog, settings, seconds):
    t0 = time.perf_counter()
    res = solve(prog, settings)
    seconds[stage] = time.perf_counter() - t0
    log.info("%s: %s after %d iterations (%.2f s)", stage, res.status, res.iterations, seconds[stage])
    if not res.optimal:
        raise PipelineError(stage, res)
    return res


def run_concurrent(grid: SpatialGrid, params: TrainParams, batt: BatteryParams, fits: SurrogateFits,
                   weights: Weights = Weights(), settings: SolverSettings = SolverSettings()) -> PipelineResult:
    sec: dict[str, float] = {}
    t0 = time.perf_counter()
    prog, vmap = build_concurrent(grid, params, batt, fits, weights)
    sec["build"] = time.perf_counter() - t0
    res = _solve("concurrent", prog, settings, sec)
    traj = extract(vmap, res, grid, prog, label="concurrent")
    return PipelineResult(traj, {"concurrent": res}, {"concurrent": prog}, sec)


def run_sequential(grid: SpatialGrid, params: TrainParams, batt: BatteryParams, fits: SurrogateFits,
                   weights: Weights = Weights(), settings: SolverSettings = SolverSettings()) -> PipelineResult:
    """Speed profile with an ideal motor first, then the power split for that profile."""
    sec: dict[str, float] = {}
    t0 = time.perf_counter()
    p1, vm1 = build_speed_only(grid, params, weights)
    sec["build_speed"] = time.perf_counter() - t0
    r1 = _solve("speed", p1, settings, sec)
    speed = extract(vm1, r1, grid, p1, label="speed")
    t0 = time.perf_counter()
    fixed = {"v": speed.v, "z": speed.z, "gamma": speed.gamma, "f_m": speed.f_m, "f_brk": speed.f_brk}
    p2, vm2 = build_ems_given_speed(grid, params, batt, fits, fixed, weights)
    sec["build_ems"] = time.perf_counter() - t0
    r2 = _solve("ems", p2, settings, sec)
    energy = extract(vm2, r2, grid, p2, label="ems")
    return PipelineResult(combine(speed, energy), {"speed": r1, "ems": r2}, {"speed": p1, "ems": p2}, sec)

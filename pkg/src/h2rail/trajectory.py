"""Physical trajectories recovered from a solved program, and the tightness audit.

Node arrays (``v, z, zeta, gamma``) have one entry per grid node; interval
arrays (``dzeta, omega, f_m, f_brk, f_fc, f_batt``) one per interval.  In the
CSV form interval quantities are written on the row of their start node and
the final row carries zeros.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProgram, VariableMap
from .powertrain import SurrogateFits, TrainParams
from .route import SpatialGrid
from .solver import SolverResult

CSV_COLUMNS = ("i", "s_m", "t_s", "v_mps", "z", "zeta_pct", "gamma", "omega", "F_m_n", "F_brk_n",
               "F_fc_n", "F_batt_n", "P_m_w", "P_fc_w", "P_batt_w")


class ExtractionError(ValueError):
    pass


@dataclass
class Trajectories:
    v: np.ndarray
    z: np.ndarray
    zeta: np.ndarray
    gamma: np.ndarray
    dzeta: np.ndarray
    omega: np.ndarray
    f_m: np.ndarray
    f_brk: np.ndarray
    f_fc: np.ndarray
    f_batt: np.ndarray
    ds: np.ndarray
    position: np.ndarray
    objective: float = float("nan")
    label: str = ""

    def __post_init__(self):
        n = self.v.size
        for name in ("z", "zeta", "gamma", "position"):
            if getattr(self, name).shape != (n,):
                raise ExtractionError(f"{name} must have {n} node entries")
        for name in ("dzeta", "omega", "f_m", "f_brk", "f_fc", "f_batt", "ds"):
            if getattr(self, name).shape != (n - 1,):
                raise ExtractionError(f"{name} must have {n - 1} interval entries")

    @property
    def n(self) -> int:
        return self.v.size

    @property
    def dt(self) -> np.ndarray:
        return self.gamma[:-1] * self.ds

    @property
    def t(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.dt)))

    @property
    def journey_time(self) -> float:
        return float(self.dt.sum())

    # interval powers use the start-node speed (zero-order hold)
    @property
    def p_m(self) -> np.ndarray:
        return self.f_m * self.v[:-1]

    @property
    def p_fc(self) -> np.ndarray:
        return self.f_fc * self.v[:-1]

    @property
    def p_batt(self) -> np.ndarray:
        return self.f_batt * self.v[:-1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("v", "z", "zeta", "gamma", "dzeta", "omega",
                                              "f_m", "f_brk", "f_fc", "f_batt")}

    def to_csv(self, header_lines: tuple[str, ...] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        t = self.t

        def pad(a):
            return np.concatenate((a, [0.0]))

        cols = [self.position, t, self.v, self.z, self.zeta, self.gamma, pad(self.omega), pad(self.f_m),
                pad(self.f_brk), pad(self.f_fc), pad(self.f_batt), pad(self.p_m), pad(self.p_fc),
                pad(self.p_batt)]
        for i in range(self.n):
            w.writerow([i] + [f"{c[i]:.10g}" for c in cols])
        return buf.getvalue()


def extract(vmap: VariableMap, result: SolverResult, grid: SpatialGrid, program: ConicProgram,
            label: str = "") -> Trajectories:
    """Physical trajectories from an optimal ``result``."""
    if not result.optimal:
        raise ExtractionError(f"cannot extract a trajectory from a {result.status} result")
    x = program.physical_x(result.x)
    d = vmap.gather(x)
    n, K = grid.n, grid.N
    zeros_n, zeros_k = np.zeros(n), np.zeros(K)
    get = lambda k, default: np.asarray(d.get(k, default), dtype=float)  # noqa: E731
    return Trajectories(
        v=get("v", zeros_n), z=get("z", zeros_n), zeta=get("zeta", zeros_n), gamma=get("gamma", zeros_n),
        dzeta=get("dzeta", zeros_k), omega=get("omega", zeros_k), f_m=get("f_m", zeros_k),
        f_brk=get("f_brk", zeros_k), f_fc=get("f_fc", zeros_k), f_batt=get("f_batt", zeros_k),
        ds=grid.ds.copy(), position=grid.position.copy(),
        objective=program.physical_objective(result.x), label=label,
    )


def combine(speed: Trajectories, energy: Trajectories, label: str = "sequential") -> Trajectories:
    """Speed fields from ``speed`` with energy fields from ``energy``."""
    return Trajectories(speed.v, speed.z, energy.zeta, speed.gamma, energy.dzeta, energy.omega,
                        speed.f_m, speed.f_brk, energy.f_fc, energy.f_batt, speed.ds, speed.position,
                        energy.objective, label)


@dataclass
class TightnessReport:
    threshold: float
    max_slack: dict[str, float]
    worst_index: dict[str, int]
    offending: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def verdict(self) -> dict[str, bool]:
        return {k: bool(v <= self.threshold) for k, v in self.max_slack.items()}

    @property
    def tight(self) -> bool:
        return all(self.verdict.values())

    def to_text(self) -> str:
        lines = [f"threshold {self.threshold:.3e}"]
        for k in ("trac", "vz", "vgam", "batt"):
            idx = self.offending.get(k, np.zeros(0, int))
            lines.append(f"{k} max_slack {self.max_slack[k]:.6e} at {self.worst_index[k]} "
                         f"tight {self.verdict[k]} offending {idx.size}"
                         + (f" first {idx[:10].tolist()}" if idx.size else ""))
        lines.append(f"all_tight {self.tight}")
        return "\n".join(lines) + "\n"


def slacks(traj: Trajectories, fits: SurrogateFits, params: TrainParams, z_stop: float,
           dwell_mask: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Relative slack of each relaxed constraint, sample by sample."""
    K = traj.n - 1
    v, z, g = traj.v, traj.z, traj.gamma
    free = slice(0, K)      # the final node is pinned and carries no cones
    vz = np.abs(v[free] ** 2 - z[free]) / np.maximum(z[free], z_stop)
    vgam = np.abs(v[free] * g[free] - 1.0)
    demand = fits.motor(traj.f_m, z[:K]) + params.p_aux * g[:K]
    supply = params.n_fc * traj.f_fc + traj.f_batt
    scale = np.maximum.reduce([np.abs(demand), np.abs(supply), params.p_aux * g[:K]])
    trac = np.abs(supply - demand) / scale
    lhs = fits.soc.alpha * traj.ds * traj.f_batt**2
    rhs = traj.omega * g[:K]
    # relative to the linear SOC term so that samples with F_batt ~ 0 do not blow up
    lin = np.abs(fits.soc.beta * traj.ds * traj.f_batt)
    batt = np.abs(rhs - lhs) / np.maximum.reduce([lhs, rhs, lin, np.full(K, 1e-12)])
    if dwell_mask is not None:
        batt = np.where(dwell_mask[:K], 0.0, batt)
    return {"trac": trac, "vz": vz, "vgam": vgam, "batt": batt}


def check_tightness(traj: Trajectories, fits: SurrogateFits, params: TrainParams, grid: SpatialGrid,
                    threshold: float = 1e-3) -> TightnessReport:
    """Largest relative slack of the four relaxed constraints.

    Dwell samples are left out of the battery check, where the fictitious
    battery force is a by-product of crawling rather than a decision.
    """
    sl = slacks(traj, fits, params, grid.z_stop, grid.dwell_mask)
    mx, worst, off = {}, {}, {}
    for k, arr in sl.items():
        mx[k] = float(arr.max()) if arr.size else 0.0
        worst[k] = int(arr.argmax()) if arr.size else -1
        off[k] = np.flatnonzero(arr > threshold)
    return TightnessReport(threshold, mx, worst, off)


def energy_balance(traj: Trajectories, fits: SurrogateFits, params: TrainParams, batt) -> dict[str, float]:
    """Energy bookkeeping of an optimised trajectory (joules).

    Fuel uses the linear surrogate; battery energy inverts the exact SOC model
    on each interval's average depletion rate.
    """
    from .powertrain import soc_power_from_depletion

    K = traj.n - 1
    fuel = float(params.n_fc * (fits.fuel_cell(traj.f_fc, traj.z[:K]) * traj.ds).sum())
    rate = traj.dzeta / np.maximum(traj.dt, 1e-300)
    batt_e = float((soc_power_from_depletion(rate, batt) * traj.dt).sum())
    mech = float((traj.f_m * traj.ds).sum())
    aux = float(params.p_aux * traj.journey_time)
    fc_electric = float(params.n_fc * (traj.f_fc * traj.ds).sum())
    return {"fuel": fuel, "battery": batt_e, "mechanical": mech, "auxiliary": aux,
            "fuel_cell_electric": fc_electric}

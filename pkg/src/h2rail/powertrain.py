"""Physical models of the hybrid train and their convex surrogates.

Forces are per train in newtons.  Fuel-cell quantities (``F_fc``, ``P_fc``)
are per stack; the train carries ``n_fc`` identical stacks that share one
command.  State of charge is in percent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

G_STANDARD = 9.80665
H2_LHV = 120.0e6    # J/kg, lower heating value of hydrogen


class ParameterError(ValueError):
    pass


class MapRangeError(ValueError):
    pass


class BatteryDomainError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class TrainParams:
    m: float = 183_000.0
    lam: float = 0.0625
    a: float = 1743.0
    b: float = 76.4
    c: float = 6.2
    g: float = G_STANDARD
    p_aux: float = 100e3
    f_m_min: float = -87e3
    f_m_max: float = 87e3
    p_m_min: float = -585e3
    p_m_max: float = 585e3
    f_brk_min: float = -180e3
    n_fc: int = 4
    p_fc_min: float = 6e3
    p_fc_max: float = 100e3

    def __post_init__(self):
        for name in ("m", "lam", "a", "b", "c", "g", "p_aux"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if not self.m > 0:
            raise ParameterError("mass must be positive")
        if not self.p_fc_min > 0:
            raise ParameterError("fuel-cell lower power bound must be strictly positive")
        if self.p_fc_max <= self.p_fc_min:
            raise ParameterError("fuel-cell power bounds are inverted")
        if self.f_brk_min > 0:
            raise ParameterError("mechanical brake lower bound must be <= 0")
        if not (self.f_m_min < 0 < self.f_m_max and self.p_m_min < 0 < self.p_m_max):
            raise ParameterError("motor bounds must bracket zero")
        if self.n_fc < 1:
            raise ParameterError("need at least one fuel-cell stack")

    @property
    def m_eq(self) -> float:
        return (1.0 + self.lam) * self.m


@dataclass(frozen=True)
class BatteryParams:
    u_oc: float = 600.0
    r: float = 0.0885
    q_wh: float = 220e3
    p_min: float = -600e3
    p_max: float = 600e3
    soc_min: float = 20.0
    soc_max: float = 80.0
    soc0: float = 50.0

    def __post_init__(self):
        if not self.u_oc > 0:
            raise ParameterError("open-circuit voltage must be positive")
        if not self.r > 0:
            raise ParameterError("internal resistance must be positive")
        if not self.q_wh > 0:
            raise ParameterError("capacity must be positive")
        if not (0 <= self.soc_min < self.soc0 < self.soc_max <= 100):
            raise ParameterError("need 0 <= soc_min < soc0 < soc_max <= 100")
        if not self.p_min < 0 < self.p_max:
            raise ParameterError("battery power bounds must bracket zero")
        if not 4 * self.p_max * self.r < self.u_oc**2:
            raise ParameterError("battery power bound exceeds the open-circuit voltage capability")

    @property
    def q_ah(self) -> float:
        return self.q_wh / self.u_oc


# ---------------------------------------------------------------------------
# exact models

def external_force(v, theta, params: TrainParams):
    v = np.asarray(v, dtype=float)
    return params.a + params.b * v + params.c * v * v + params.m * params.g * np.sin(theta)


def kinetic_step(z, f_m, f_brk, f_ext, ds, params: TrainParams):
    k = 2.0 * np.asarray(ds, dtype=float) / params.m_eq
    return z + k * (f_m + f_brk) - k * f_ext


def exact_soc_rate(p_batt, batt: BatteryParams):
    """Rate of change of state of charge in percent per second.

    Negative while discharging (``p_batt > 0``).
    """
    p = np.asarray(p_batt, dtype=float)
    disc = batt.u_oc**2 - 4.0 * p * batt.r
    if np.any(disc < 0):
        raise BatteryDomainError("battery power exceeds what the open-circuit voltage can deliver")
    current = (batt.u_oc - np.sqrt(disc)) / (2.0 * batt.r)
    return -current / (3600.0 * batt.q_ah) * 100.0


def depletion_rate(p_batt, batt: BatteryParams):
    """Charge drawn per second in percent; positive while discharging."""
    return -exact_soc_rate(p_batt, batt)


def soc_power_from_depletion(rate, batt: BatteryParams):
    """Battery terminal power that produces the depletion ``rate`` (%/s)."""
    i = np.asarray(rate, dtype=float) * 3600.0 * batt.q_ah / 100.0
    return batt.u_oc * i - batt.r * i * i


# ---------------------------------------------------------------------------
# efficiency maps

def _strictly_increasing(x) -> bool:
    return bool(np.all(np.diff(x) > 0))


@dataclass(frozen=True)
class MotorMap:
    force: np.ndarray           # N, ascending
    speed: np.ndarray           # m/s, ascending
    eta: np.ndarray             # shape (force, speed)

    def __post_init__(self):
        f, v, e = (np.asarray(x, dtype=float) for x in (self.force, self.speed, self.eta))
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "speed", v)
        object.__setattr__(self, "eta", e)
        if f.size < 2 or v.size < 2:
            raise ParameterError("motor map needs at least two force and two speed samples")
        if e.shape != (f.size, v.size):
            raise ParameterError(f"motor efficiency table has shape {e.shape}, expected {(f.size, v.size)}")
        if not (_strictly_increasing(f) and _strictly_increasing(v)):
            raise ParameterError("motor map grids must be strictly increasing")
        if not np.all((e > 0) & (e <= 1)):
            raise ParameterError("motor efficiency must lie in (0, 1]")

    def efficiency(self, f, v):
        f, v = np.broadcast_arrays(np.asarray(f, float), np.asarray(v, float))
        if np.any((f < self.force[0] - 1e-9) | (f > self.force[-1] + 1e-9)
                  | (v < self.speed[0] - 1e-9) | (v > self.speed[-1] + 1e-9)):
            raise MapRangeError("motor operating point outside the efficiency map")
        interp = RegularGridInterpolator((self.force, self.speed), self.eta)
        pts = np.stack([np.clip(f, self.force[0], self.force[-1]),
                        np.clip(v, self.speed[0], self.speed[-1])], axis=-1)
        return interp(pts.reshape(-1, 2)).reshape(f.shape)

    def electric_force(self, f, v):
        """Electric-side force: ``F/eta`` when motoring, ``F*eta`` when regenerating."""
        f = np.asarray(f, dtype=float)
        eta = self.efficiency(f, v)
        return np.where(f >= 0, f / eta, f * eta)


@dataclass(frozen=True)
class FuelCellMap:
    power: np.ndarray           # W per stack, ascending
    eta: np.ndarray

    def __post_init__(self):
        p, e = np.asarray(self.power, float), np.asarray(self.eta, float)
        object.__setattr__(self, "power", p)
        object.__setattr__(self, "eta", e)
        if p.size < 2:
            raise ParameterError("fuel-cell map needs at least two samples")
        if e.shape != p.shape:
            raise ParameterError("fuel-cell power and efficiency columns differ in length")
        if not _strictly_increasing(p):
            raise ParameterError("fuel-cell power grid must be strictly increasing")
        if not np.all((e > 0) & (e <= 1)):
            raise ParameterError("fuel-cell efficiency must lie in (0, 1]")

    def efficiency(self, p):
        p = np.asarray(p, dtype=float)
        tol = 1e-9 * max(1.0, abs(self.power[-1]))
        if np.any((p < self.power[0] - tol) | (p > self.power[-1] + tol)):
            raise MapRangeError(
                f"fuel-cell power outside map range [{self.power[0]:g}, {self.power[-1]:g}] W")
        return np.interp(p, self.power, self.eta)


def exact_fuel_rate(f_fc, z, fc_map: FuelCellMap):
    """Hydrogen energy per metre (J/m) for one stack at force ``f_fc``."""
    f_fc = np.asarray(f_fc, dtype=float)
    return f_fc / fc_map.efficiency(f_fc * np.sqrt(z))


def motor_loss_force(f, v):
    """Loss model behind the shipped motor map (copper, iron and friction terms)."""
    f = np.asarray(f, float)
    v = np.asarray(v, float)
    return 900.0 + 0.2 * v * v + 2.2e-6 * f * f + 0.002 * np.abs(f) + 2e-4 * np.abs(f) * v


def default_motor_map(params: TrainParams = TrainParams(), n_force: int = 50, n_speed: int = 50,
                      v_min: float = 0.5, v_max: float = 40.0) -> MotorMap:
    f = np.linspace(params.f_m_min, params.f_m_max, n_force)
    f = f[f != 0.0]
    v = np.linspace(v_min, v_max, n_speed)
    F, V = np.meshgrid(f, v, indexing="ij")
    fe = F + motor_loss_force(F, V)
    eta = np.where(F > 0, F / fe, fe / F)
    return MotorMap(f, v, eta)


def default_fuelcell_eta(p, p_rated: float = 100e3):
    """Efficiency curve peaking at 0.55 near 30% rated power, 0.52 at both ends."""
    x = np.asarray(p, float) / p_rated
    lo, hi, peak, xp = 0.52, 0.52, 0.55, 0.3
    x0 = 0.06
    return np.where(x > xp, peak - (peak - hi) * ((x - xp) / (1 - xp)) ** 2,
                    peak - (peak - lo) * ((xp - x) / (xp - x0)) ** 2)


def default_fuelcell_map(params: TrainParams = TrainParams(), n: int = 50) -> FuelCellMap:
    p = np.linspace(params.p_fc_min, params.p_fc_max, n)
    return FuelCellMap(p, default_fuelcell_eta(p, params.p_fc_max))


def write_motor_map(mm: MotorMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["force_n", "speed_mps", "eta"])
        for i, f in enumerate(mm.force):
            for j, v in enumerate(mm.speed):
                w.writerow([repr(float(f)), repr(float(v)), repr(float(mm.eta[i, j]))])


def write_fuelcell_map(fm: FuelCellMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["power_w", "eta"])
        for p, e in zip(fm.power, fm.eta):
            w.writerow([repr(float(p)), repr(float(e))])


def _read_table(path, header):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != header:
        raise ParameterError(f"{path}:1: expected header {','.join(header)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        try:
            out.append([float(c) for c in row])
        except ValueError:
            raise ParameterError(f"{path}:{lineno}: non-numeric field") from None
        if len(row) != len(header):
            raise ParameterError(f"{path}:{lineno}: expected {len(header)} fields")
    return np.array(out).reshape(-1, len(header))


def load_motor_map(path) -> MotorMap:
    t = _read_table(path, ["force_n", "speed_mps", "eta"])
    f, v = np.unique(t[:, 0]), np.unique(t[:, 1])
    if f.size * v.size != t.shape[0]:
        raise ParameterError(f"{path}: motor map is not a full force x speed grid")
    eta = np.full((f.size, v.size), np.nan)
    eta[np.searchsorted(f, t[:, 0]), np.searchsorted(v, t[:, 1])] = t[:, 2]
    if np.isnan(eta).any():
        raise ParameterError(f"{path}: duplicate or missing motor map entries")
    return MotorMap(f, v, eta)


def load_fuelcell_map(path) -> FuelCellMap:
    t = _read_table(path, ["power_w", "eta"])
    order = np.argsort(t[:, 0], kind="stable")
    return FuelCellMap(t[order, 0], t[order, 1])


# ---------------------------------------------------------------------------
# parameter configuration

_TRAIN_KEYS = {
    "vehicle": {"mass_kg": "m", "rotating_mass_fraction": "lam", "davis_a_n": "a",
                "davis_b_kg_per_s": "b", "davis_c_kg_per_m": "c", "gravity_mps2": "g",
                "aux_power_w": "p_aux", "brake_force_min_n": "f_brk_min"},
    "motor": {"force_min_n": "f_m_min", "force_max_n": "f_m_max",
              "power_min_w": "p_m_min", "power_max_w": "p_m_max"},
    "fuel_cell": {"stacks": "n_fc", "power_min_w": "p_fc_min", "power_max_w": "p_fc_max"},
}
_BATTERY_KEYS = {"open_circuit_voltage_v": "u_oc", "resistance_ohm": "r", "capacity_wh": "q_wh",
                 "power_min_w": "p_min", "power_max_w": "p_max", "soc_min_pct": "soc_min",
                 "soc_max_pct": "soc_max", "soc_initial_pct": "soc0"}


def params_from_dict(data: dict) -> tuple[TrainParams, BatteryParams]:
    known = set(_TRAIN_KEYS) | {"battery"}
    for section in data:
        if section not in known:
            raise ParameterError(f"unknown parameter section [{section}]")
    train = {}
    for section, keys in _TRAIN_KEYS.items():
        for key, value in data.get(section, {}).items():
            if key not in keys:
                raise ParameterError(f"unknown key {section}.{key}")
            train[keys[key]] = int(value) if keys[key] == "n_fc" else float(value)
    batt = {}
    for key, value in data.get("battery", {}).items():
        if key not in _BATTERY_KEYS:
            raise ParameterError(f"unknown key battery.{key}")
        batt[_BATTERY_KEYS[key]] = float(value)
    return TrainParams(**train), BatteryParams(**batt)


def load_params(path) -> tuple[TrainParams, BatteryParams]:
    with open(path, "rb") as fh:
        return params_from_dict(tomllib.load(fh))


def params_to_toml(params: TrainParams, batt: BatteryParams) -> str:
    lines = []
    for section, keys in _TRAIN_KEYS.items():
        lines.append(f"[{section}]")
        for key, attr in keys.items():
            lines.append(f"{key} = {getattr(params, attr)!r}")
        lines.append("")
    lines.append("[battery]")
    for key, attr in _BATTERY_KEYS.items():
        lines.append(f"{key} = {getattr(batt, attr)!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# surrogate fits

@dataclass(frozen=True)
class FitStats:
    max_rel: float
    mean_rel: float
    max_abs: float
    n_samples: int


@dataclass(frozen=True)
class MotorFit:
    """``q_m(F, z) = p00 + p10 z + p01 F + p11 F z + p20 z^2 + p02 F^2``."""

    p00: float
    p10: float
    p01: float
    p11: float
    p20: float
    p02: float
    stats: FitStats | None = None
    constrained: bool = False

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([self.p00, self.p10, self.p01, self.p11, self.p20, self.p02])

    def __call__(self, f, z):
        f = np.asarray(f, float)
        z = np.asarray(z, float)
        return (self.p00 + self.p10 * z + self.p01 * f + self.p11 * f * z
                + self.p20 * z * z + self.p02 * f * f)

    def hessian_form(self) -> np.ndarray:
        """Quadratic-form matrix in ``(z, F)``."""
        return np.array([[self.p20, 0.5 * self.p11], [0.5 * self.p11, self.p02]])

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the form, scaled by its largest magnitude entry."""
        H = self.hessian_form()
        scale = max(np.abs(H).max(), 1e-300)
        return float(np.linalg.eigvalsh(H / scale).min())

    def is_convex(self, tol: float = 1e-12) -> bool:
        return self.min_eigenvalue() >= -tol

    @property
    def is_separable(self) -> bool:
        return self.p11 == 0.0 and self.p20 == 0.0


@dataclass(frozen=True)
class FuelCellFit:
    """``l_fc(F, z) = p0 F + p1 z`` in J/m per stack."""

    p0: float
    p1: float
    stats: FitStats | None = None

    def __call__(self, f, z):
        return self.p0 * np.asarray(f, float) + self.p1 * np.asarray(z, float)


@dataclass(frozen=True)
class SocFit:
    """``q_zeta(P) = alpha P^2 + beta P`` in percent per second, positive on discharge."""

    alpha: float
    beta: float
    stats: FitStats | None = None
    method: str = "minimax"

    def __call__(self, p):
        p = np.asarray(p, float)
        return self.alpha * p * p + self.beta * p


@dataclass(frozen=True)
class SurrogateFits:
    motor: MotorFit
    fuel_cell: FuelCellFit
    soc: SocFit

    def check(self) -> None:
        if not self.motor.is_convex():
            raise FitError(f"motor surrogate is not convex (min eigenvalue {self.motor.min_eigenvalue():.3e})")
        if not (self.soc.alpha > 0 and self.soc.beta > 0):
            raise FitError("battery surrogate needs alpha > 0 and beta > 0")
        if not self.fuel_cell.p0 > 0:
            raise FitError("fuel-cell surrogate needs p0 > 0")

    def to_dict(self) -> dict:
        return {"motor": asdict(self.motor), "fuel_cell": asdict(self.fuel_cell), "soc": asdict(self.soc)}

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateFits":
        def mk(kind, data):
            data = dict(data)
            st = data.pop("stats", None)
            return kind(**data, stats=FitStats(**st) if st else None)
        return cls(mk(MotorFit, d["motor"]), mk(FuelCellFit, d["fuel_cell"]), mk(SocFit, d["soc"]))


def _stats(pred, target, floor_frac: float = 0.0) -> FitStats:
    err = np.abs(pred - target)
    den = np.maximum(np.abs(target), floor_frac * np.abs(target).max())
    rel = err / den
    return FitStats(float(rel.max()), float(rel.mean()), float(err.max()), int(target.size))


def motor_fit_samples(mm: MotorMap, params: TrainParams):
    """Map grid points inside the force and power envelope: ``(F, z, F_electric)``."""
    F, V = np.meshgrid(mm.force, mm.speed, indexing="ij")
    inside = ((F >= params.f_m_min) & (F <= params.f_m_max)
              & (F * V >= params.p_m_min * (1 + 1e-12)) & (F * V <= params.p_m_max * (1 + 1e-12)))
    fe = np.where(F >= 0, F / mm.eta, F * mm.eta)
    return F[inside], V[inside] ** 2, fe[inside]


MOTOR_RESIDUAL_FLOOR = 0.05


def fit_motor_quadratic(mm: MotorMap, params: TrainParams = TrainParams(),
                        samples=None) -> MotorFit:
    """Least-squares quadratic in ``(z, F)`` for the electric-side motor force.

    Convexity of the ``(z, F)`` form is imposed when the unconstrained fit
    violates it.  Relative residuals use a floor of 5% of the peak target so
    that samples near zero force do not dominate.
    """
    f, z, y = motor_fit_samples(mm, params) if samples is None else samples
    f, z, y = (np.asarray(a, float) for a in (f, z, y))
    if f.size < 6:
        raise FitError("motor fit needs at least six samples inside the envelope")
    fs = max(np.abs(f).max(), 1.0)
    zs = max(np.abs(z).max(), 1e-12)
    sc = np.array([1.0, 1 / zs, 1 / fs, 1 / (fs * zs), 1 / zs**2, 1 / fs**2])
    X = np.column_stack([np.ones_like(f), z, f, f * z, z * z, f * f]) * sc
    ys = max(np.abs(y).max(), 1e-300)
    if np.linalg.matrix_rank(X, tol=1e-10 * np.linalg.norm(X, 2)) < 6:
        raise FitError("motor fit samples are rank deficient")
    p, *_ = np.linalg.lstsq(X, y / ys, rcond=None)
    constrained = False
    form = np.array([[p[4], 0.5 * p[3]], [0.5 * p[3], p[5]]])
    if np.linalg.eigvalsh(form).min() < -1e-12 * max(np.abs(form).max(), 1e-300):
        p = _psd_least_squares(X, y / ys)
        constrained = True
    p = p * sc * ys
    fit = MotorFit(*map(float, p), constrained=constrained)
    return MotorFit(*map(float, p), stats=_stats(fit(f, z), y, MOTOR_RESIDUAL_FLOOR), constrained=constrained)


def _psd_least_squares(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``min ||X p - y||`` subject to ``[[p4, p3/2], [p3/2, p5]]`` PSD, via a conic program."""
    from .conic import ConicProgram
    from .solver import ConeDims, SolverSettings, solve

    Q, R = np.linalg.qr(X)
    r = Q.T @ y
    n = X.shape[1]
    # variables [p (n), t]; minimise t with ||R p - r|| <= t and the PSD cone
    c = np.zeros(n + 1)
    c[-1] = 1.0
    G1 = np.zeros((n + 1, n + 1))
    h1 = np.zeros(n + 1)
    G1[0, -1] = -1.0
    G1[1:, :n] = -R
    h1[1:] = -r
    G2 = np.zeros((3, n + 1))
    # (p4 + p5, p3, p4 - p5) in Q^3
    G2[0, 4], G2[0, 5] = -1.0, -1.0
    G2[1, 3] = -1.0
    G2[2, 4], G2[2, 5] = -1.0, 1.0
    prog = ConicProgram(c, None, np.zeros(0), sp.csr_matrix(np.vstack([G1, G2])),
                        np.concatenate([h1, np.zeros(3)]), ConeDims(0, (n + 1, 3)))
    res = solve(prog, SolverSettings(feas_tol=1e-10, gap_tol=1e-10, max_iter=80))
    if not res.optimal:
        raise FitError(f"convexity-constrained motor fit failed: {res.status}")
    p = res.x[:n].copy()
    # project the form onto the PSD cone so the certificate holds exactly
    w, U = np.linalg.eigh(np.array([[p[4], 0.5 * p[3]], [0.5 * p[3], p[5]]]))
    H = (U * np.maximum(w, 0.0)) @ U.T
    p[4], p[3], p[5] = H[0, 0], 2.0 * H[0, 1], H[1, 1]
    if abs(p[3]) < 1e-12 * max(p[4], p[5], 1e-300):
        p[3] = 0.0
    return p


def fit_fuelcell_linear(fm: FuelCellMap, v_range: tuple[float, float], params: TrainParams = TrainParams(),
                        n: int = 50) -> FuelCellFit:
    """Relative-weighted least squares of ``F / eta(F v)`` by ``p0 F + p1 z``.

    Samples form an ``n`` by ``n`` grid over stack power in the map range
    clipped to the parameter bounds and speed in ``v_range``.
    """
    if fm.power.size == 0:
        raise FitError("empty fuel-cell map")
    v_lo, v_hi = map(float, v_range)
    if not 0 < v_lo < v_hi:
        raise FitError("fuel-cell fit needs 0 < v_lo < v_hi")
    p_lo = max(params.p_fc_min, fm.power[0])
    p_hi = min(params.p_fc_max, fm.power[-1])
    if not p_lo < p_hi:
        raise FitError("fuel-cell map does not overlap the stack power bounds")
    P, V = np.meshgrid(np.linspace(p_lo, p_hi, n), np.linspace(v_lo, v_hi, n), indexing="ij")
    Fv, Z = (P / V).ravel(), (V * V).ravel()
    E = Fv / fm.efficiency(P.ravel())
    X = np.column_stack([Fv, Z])
    w = 1.0 / E
    colscale = np.abs(X).max(axis=0)
    q, *_ = np.linalg.lstsq(X * w[:, None] / colscale, np.ones_like(E), rcond=None)
    q = q / colscale
    if not q[0] > 0:
        raise FitError("fuel-cell fit produced a nonpositive force coefficient")
    fit = FuelCellFit(float(q[0]), float(q[1]))
    return FuelCellFit(fit.p0, fit.p1, _stats(fit(Fv, Z), E))


def fit_soc_quadratic(batt: BatteryParams, p_range: tuple[float, float] | None = None, n: int = 401,
                      method: str = "minimax") -> SocFit:
    """Fit ``alpha P^2 + beta P`` to the depletion rate over ``p_range``.

    ``method="minimax"`` minimises the worst absolute error (a small linear
    program); ``"lstsq"`` is ordinary least squares.  Residual statistics are
    relative to the peak depletion rate on the range.
    """
    lo, hi = p_range if p_range is not None else (batt.p_min, batt.p_max)
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise FitError("degenerate battery power range")
    if 4 * hi * batt.r > batt.u_oc**2:
        raise FitError("battery power range leaves the real-discriminant region")
    P = np.linspace(lo, hi, n)
    d = depletion_rate(P, batt)
    s = max(abs(lo), abs(hi))
    X = np.column_stack([(P / s) ** 2, P / s])
    ds_ = max(np.abs(d).max(), 1e-300)
    if method == "lstsq":
        coef, *_ = np.linalg.lstsq(X, d / ds_, rcond=None)
    elif method == "minimax":
        coef = _minimax(X, d / ds_)
    else:
        raise FitError(f"unknown SOC fit method {method!r}")
    alpha = float(coef[0] * ds_ / s**2)
    beta = float(coef[1] * ds_ / s)
    fit = SocFit(alpha, beta, method=method)
    err = np.abs(fit(P) - d)
    peak = np.abs(d).max()
    stats = FitStats(float(err.max() / peak), float(err.mean() / peak), float(err.max()), int(P.size))
    return SocFit(alpha, beta, stats, method)


def _minimax(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    from .conic import ConicProgram
    from .solver import ConeDims, SolverSettings, solve

    m, k = X.shape
    c = np.zeros(k + 1)
    c[-1] = 1.0
    # X p - y <= t  and  y - X p <= t
    G = np.block([[X, -np.ones((m, 1))], [-X, -np.ones((m, 1))]])
    h = np.concatenate([y, -y])
    prog = ConicProgram(c, None, np.zeros(0), sp.csr_matrix(G), h, ConeDims(2 * m, ()))
    res = solve(prog, SolverSettings(feas_tol=1e-10, gap_tol=1e-10, max_iter=80))
    if not res.optimal:
        raise FitError(f"minimax SOC fit failed: {res.status}")
    return res.x[:k]


def fit_all(params: TrainParams, batt: BatteryParams, motor_map: MotorMap, fc_map: FuelCellMap,
            v_range: tuple[float, float] | None = None, soc_method: str = "minimax") -> SurrogateFits:
    if v_range is None:
        v_range = (motor_map.speed[0], motor_map.speed[-1])
    fits = SurrogateFits(
        fit_motor_quadratic(motor_map, params),
        fit_fuelcell_linear(fc_map, v_range, params),
        fit_soc_quadratic(batt, method=soc_method),
    )
    fits.check()
    return fits

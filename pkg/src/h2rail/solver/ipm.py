"""Primal-dual barrier (interior-point) method for sparse conic programs.

The method follows the homogeneous self-dual embedding with Nesterov-Todd
scaling and Mehrotra predictor-corrector steps.  Each iteration factors one
sparse quasi-definite KKT matrix

    [ dI    A^T    G^T      ]
    [ A    -dI     0        ]
    [ G     0    -W^2 - dI  ]

with SuperLU and solves three right-hand sides against it, polishing each
solve with iterative refinement on the unregularised system.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import Cones

if TYPE_CHECKING:
    from ..conic import ConicProgram

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"


class SolverError(RuntimeError):
    """Numerical breakdown; ``result`` carries the last iterate."""

    def __init__(self, message: str, result: "SolverResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iter: int = 100
    step_fraction: float = 0.99
    static_reg: float = 1e-9
    refine_steps: int = 10
    # looser certificate tolerance accepted once the iterates stall with tau/kappa -> 0
    reduced_tol: float = 1e-4
    verbose: bool = False

    def __post_init__(self):
        if self.feas_tol <= 0 or self.gap_tol <= 0 or self.reduced_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class Residuals:
    primal_eq: float
    primal_cone: float
    dual: float
    dual_cone: float
    complementarity: float
    gap: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


@dataclass
class SolverResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    objective: float
    residuals: Residuals
    iterations: int
    wall_time: float
    log: list[dict] = field(default_factory=list)
    certificate: dict[str, np.ndarray] | None = None
    # nonzeros of the KKT matrix and of its last LU factors
    fill: dict[str, int] = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def log_text(self) -> str:
        head = f"{'it':>3} {'pcost':>14} {'dcost':>14} {'gap':>10} {'mu':>10} {'pres':>10} {'dres':>10} {'step':>7} {'sigma':>7}"
        rows = [head]
        for r in self.log:
            rows.append(
                f"{r['iter']:>3d} {r['pcost']:>14.7e} {r['dcost']:>14.7e} {r['gap']:>10.3e} {r['mu']:>10.3e} "
                f"{r['pres']:>10.3e} {r['dres']:>10.3e} {r['step']:>7.4f} {r['sigma']:>7.4f}"
            )
        return "\n".join(rows)


def _inf(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def kkt_residuals(program: "ConicProgram", candidate) -> Residuals:
    """Optimality residuals of a primal-dual candidate ``(x, y, z)``.

    ``x`` primal, ``y`` equality multipliers, ``z`` cone multipliers, all in the
    program's (scaled) units.  Missing duals may be passed as ``None``.
    """
    x, y, z = candidate
    x = np.asarray(x, dtype=float)
    if x.size != program.n:
        raise ValueError("primal vector has wrong length")
    y = np.zeros(program.b.size) if y is None else np.asarray(y, dtype=float)
    z = np.zeros(program.h.size) if z is None else np.asarray(z, dtype=float)
    cones = Cones(program.dims)
    s = program.h - program.G @ x
    pcost = float(program.c @ x)
    dcost = float(-(program.b @ y) - program.h @ z)
    return Residuals(
        primal_eq=_inf(program.A @ x - program.b),
        primal_cone=cones.violation(s) if s.size else 0.0,
        dual=_inf(program.A.T @ y + program.G.T @ z + program.c),
        dual_cone=cones.violation(z) if z.size else 0.0,
        complementarity=float(s @ z),
        gap=pcost - dcost,
    )


class _KKT:
    """Assembler and factor cache for the regularised KKT matrix."""

    def __init__(self, A: sp.csr_matrix, G: sp.csr_matrix, reg: float):
        self.n, self.p, self.m = A.shape[1], A.shape[0], G.shape[0]
        n, p, m = self.n, self.p, self.m
        self.reg = reg
        Ac, Gc = A.tocoo(), G.tocoo()
        rows = [Ac.row + n, Ac.col, Gc.row + n + p, Gc.col]
        cols = [Ac.col, Ac.row + n, Gc.col, Gc.row + n + p]
        vals = [Ac.data, Ac.data, Gc.data, Gc.data]
        self.off_rows = np.concatenate(rows)
        self.off_cols = np.concatenate(cols)
        self.off_vals = np.concatenate(vals)
        self.size = n + p + m
        self.sign = np.concatenate((np.ones(n), -np.ones(p + m)))
        self.lu = None
        self.K = None
        self.fill: dict[str, int] = {}

    def factor(self, w2: tuple[np.ndarray, np.ndarray, np.ndarray]):
        n, p = self.n, self.p
        r, c, v = w2
        diag = np.arange(self.size)
        rows = np.concatenate((self.off_rows, r + n + p, diag))
        cols = np.concatenate((self.off_cols, c + n + p, diag))
        vals_true = np.concatenate((self.off_vals, -v, np.zeros(self.size)))
        vals_reg = vals_true.copy()
        vals_reg[-self.size:] = self.reg * self.sign
        shape = (self.size, self.size)
        self.K = sp.csc_matrix((vals_true, (rows, cols)), shape=shape)
        Kreg = sp.csc_matrix((vals_reg, (rows, cols)), shape=shape)
        try:
            self.lu = spla.splu(Kreg, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError:
            # fall back to threshold pivoting when a diagonal pivot vanishes
            self.lu = spla.splu(Kreg, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1)
        self.fill = dict(kkt_nnz=int(Kreg.nnz), factor_nnz=int(self.lu.L.nnz + self.lu.U.nnz))

    def solve(self, rhs: np.ndarray, refine: int) -> np.ndarray:
        u = self.lu.solve(rhs)
        scale = max(_inf(rhs), 1e-300)
        err = _inf(rhs - self.K @ u)
        for _ in range(refine):
            if err <= 1e-14 * scale:
                break
            du = self.lu.solve(rhs - self.K @ u)
            cand = u + du
            cerr = _inf(rhs - self.K @ cand)
            if not cerr < err:
                break
            u, err = cand, cerr
        if not np.all(np.isfinite(u)):
            raise FloatingPointError("non-finite KKT solution")
        self.last_error = err / scale
        return u


def solve(program: "ConicProgram", settings: SolverSettings | None = None) -> SolverResult:
    """Solve ``program`` to the tolerances in ``settings``."""
    settings = settings or SolverSettings()
    t_start = time.perf_counter()
    c, A, b, G, h = program.c, program.A, program.b, program.G, program.h
    n, p, m = c.size, b.size, h.size
    cones = Cones(program.dims)
    nu = cones.degree
    e = cones.identity()
    kkt = _KKT(sp.csr_matrix(A), sp.csr_matrix(G), settings.static_reg)

    def split(u):
        return u[:n], u[n:n + p], u[n + p:]

    bnorm, hnorm, cnorm = _inf(b), _inf(h), _inf(c)

    # least-squares start, shifted into the cone interior
    r0, c0, v0 = np.arange(m), np.arange(m), np.ones(m)
    try:
        kkt.factor((r0, c0, v0))
        xp, _, zp = split(kkt.solve(np.concatenate((np.zeros(n), b, h)), settings.refine_steps))
        _, yd, zd = split(kkt.solve(np.concatenate((-c, np.zeros(p), np.zeros(m))), settings.refine_steps))
    except (RuntimeError, FloatingPointError) as exc:
        raise SolverError(f"singular KKT system at initialisation: {exc}") from exc
    x, y = xp, yd
    s = -zp
    z = zd
    if m:
        a = cones.min_eig(s)
        if a <= 0:
            s = s + (1.0 - a) * e
        a = cones.min_eig(z)
        if a <= 0:
            z = z + (1.0 - a) * e
    tau, kappa = 1.0, 1.0

    history: list[dict] = []
    status = ITERATION_LIMIT
    certificate = None
    best = None

    def normalised():
        return x / tau, y / tau, z / tau, s / tau

    for it in range(settings.max_iter + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = A @ x - b * tau
        rz = s + G @ x - h * tau
        rt = kappa + c @ x + b @ y + h @ z

        xh, yh, zh, sh = normalised()
        pcost = float(c @ xh)
        dcost = float(-(b @ yh) - h @ zh)
        gap = float(sh @ zh)
        pres = max(_inf(ry) / tau / (1.0 + bnorm), _inf(rz) / tau / (1.0 + hnorm))
        dres = _inf(rx) / tau / (1.0 + cnorm)
        mu = (s @ z + tau * kappa) / (nu + 1)
        entry = dict(iter=it, pcost=pcost, dcost=dcost, gap=gap, mu=float(mu), pres=pres, dres=dres,
                     step=history[-1]["step_taken"] if history else 0.0,
                     sigma=history[-1]["sigma_used"] if history else 0.0, tau=tau, kappa=kappa)
        history.append(entry)
        if settings.verbose:
            log.info("it %3d pcost %.7e dcost %.7e gap %.2e pres %.2e dres %.2e", it, pcost, dcost, gap, pres, dres)

        merit = max(pres, dres, abs(gap) / (1.0 + abs(pcost)))
        if best is None or merit < best[0]:
            best = (merit, x.copy(), y.copy(), z.copy(), s.copy(), tau)

        gap_ok = max(gap, abs(pcost - dcost)) <= settings.gap_tol * (1.0 + abs(pcost))
        if pres <= settings.feas_tol and dres <= settings.feas_tol and gap_ok:
            status = OPTIMAL
            break
        hz_by = float(h @ z + b @ y)
        if hz_by < 0:
            pinf = _inf(A.T @ y + G.T @ z) / -hz_by
            entry["pinf"] = pinf
            if pinf <= settings.feas_tol:
                status = INFEASIBLE
                certificate = dict(y=y / -hz_by, z=z / -hz_by)
                break
        cx = float(c @ x)
        if cx < 0:
            dinf = max(_inf(A @ x), _inf(G @ x + s)) / -cx
            entry["dinf"] = dinf
            if dinf <= settings.feas_tol:
                status = UNBOUNDED
                certificate = dict(x=x / -cx)
                break
        if it == settings.max_iter:
            break

        W = cones.scaling(s, z)
        lam = W.lam
        try:
            kkt.factor(W.squared_triplets())
            x2, y2, z2 = split(kkt.solve(np.concatenate((-c, b, h)), settings.refine_steps))
        except (RuntimeError, FloatingPointError) as exc:
            result = _result(program, ITERATION_LIMIT, best, history, t_start)
            raise SolverError(f"KKT factorisation failed at iteration {it}: {exc}", result) from exc
        denom2 = -kappa / tau + c @ x2 + b @ y2 + h @ z2

        def direction(eta, ds_target, dk_target):
            rhs_z = -eta * rz - W.apply(cones.divide(lam, ds_target))
            u = kkt.solve(np.concatenate((-eta * rx, -eta * ry, rhs_z)), settings.refine_steps)
            x1, y1, z1 = split(u)
            num = -eta * rt - dk_target / tau - (c @ x1 + b @ y1 + h @ z1)
            dtau = num / denom2
            dx, dy, dz = x1 + dtau * x2, y1 + dtau * y2, z1 + dtau * z2
            ds = W.apply(cones.divide(lam, ds_target) - W.apply(dz))
            dkappa = (dk_target - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        def step_length(dz, ds, dtau, dkappa):
            amax = min(cones.max_step(s, ds), cones.max_step(z, dz))
            if dtau < 0:
                amax = min(amax, -tau / dtau)
            if dkappa < 0:
                amax = min(amax, -kappa / dkappa)
            return amax

        try:
            lam2 = cones.product(lam, lam)
            aff = direction(1.0, -lam2, -kappa * tau)
            a_aff = min(1.0, step_length(aff[2], aff[3], aff[4], aff[5]))
            sigma = float(np.clip((1.0 - a_aff) ** 3, 0.0, 1.0))
            corr = cones.product(W.apply_inv(aff[3]), W.apply(aff[2]))
            ds_t = -lam2 - corr + sigma * mu * e
            dk_t = -kappa * tau - aff[5] * aff[4] + sigma * mu
            dx, dy, dz, ds, dtau, dkappa = direction(1.0 - sigma, ds_t, dk_t)
        except (FloatingPointError, ZeroDivisionError) as exc:
            result = _result(program, ITERATION_LIMIT, best, history, t_start)
            raise SolverError(f"numerical breakdown at iteration {it}: {exc}", result) from exc
        alpha = min(1.0, settings.step_fraction * step_length(dz, ds, dtau, dkappa))
        entry["step_taken"], entry["sigma_used"] = alpha, sigma
        entry["kkt_err"] = kkt.last_error
        x, y, z, s = x + alpha * dx, y + alpha * dy, z + alpha * dz, s + alpha * ds
        tau, kappa = tau + alpha * dtau, kappa + alpha * dkappa
        if alpha < 1e-10:
            break

    if status == ITERATION_LIMIT and tau < 1e-3 * kappa:
        last = history[-1]
        if last.get("pinf", np.inf) <= settings.reduced_tol:
            hz_by = float(h @ z + b @ y)
            status = INFEASIBLE
            certificate = dict(y=y / -hz_by, z=z / -hz_by, reduced_accuracy=True)
        elif last.get("dinf", np.inf) <= settings.reduced_tol:
            status = UNBOUNDED
            certificate = dict(x=x / -float(c @ x), reduced_accuracy=True)
    if status in (OPTIMAL,):
        pick = (None, x, y, z, s, tau)
    elif status in (INFEASIBLE, UNBOUNDED):
        pick = (None, x, y, z, s, max(tau, 1e-300))
    else:
        pick = best
    result = _result(program, status, pick, history, t_start)
    result.certificate = certificate
    result.fill = dict(kkt.fill)
    return result


def _result(program, status, pick, history, t_start) -> SolverResult:
    _, x, y, z, _, tau = pick
    xh, yh, zh = x / tau, y / tau, z / tau
    if status in (INFEASIBLE, UNBOUNDED):
        objective = np.nan
    else:
        objective = float(program.c @ xh)
    for row in history:
        row.pop("step_taken", None)
        row.pop("sigma_used", None)
    return SolverResult(
        status=status,
        x=xh,
        y=yh,
        z=zh,
        objective=objective,
        residuals=kkt_residuals(program, (xh, yh, zh)),
        iterations=max(len(history) - 1, 0),
        wall_time=time.perf_counter() - t_start,
        log=history,
    )

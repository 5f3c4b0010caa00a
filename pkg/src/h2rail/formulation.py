"""Second-order cone programs for speed and energy management on a spatial grid.

Three builders share one assembler:

* :func:`build_concurrent` optimises speed and the fuel-cell/battery split
  together.
* :func:`build_speed_only` plans speed with an ideal motor and no knowledge
  of the energy sources (first step of the sequential benchmark).
* :func:`build_ems_given_speed` splits power between fuel cell and battery
  for a fixed speed profile (second step).

Nodes ``k = 0..n-1`` carry ``v, z, zeta, gamma``.  Interval ``k`` (node ``k``
to ``k+1``) carries ``dzeta, omega, f_m, f_brk, f_fc, f_batt`` and is
traversed at the state of node ``k``.  The final node is fixed (stopped at
``z_stop``) so its ``v`` and ``gamma`` are pinned rather than coned.

Constraint families are labelled so that :meth:`ConicProgram.coverage` can
audit that each one produced rows:

====== ==========================================================
dyn    kinetic-energy recursion
soc    state-of-charge recursion
omega  definition of the battery auxiliary variable
time   total journey time
term   start/terminal rest and state-of-charge conditions
dwell  rest at dwell samples
pin    fixed final-node speed and inverse speed
vb     speed bounds           zb     kinetic-energy bounds
socb   state-of-charge bounds fmb    motor force bounds
brkb   brake force bounds     pm     motor power bounds
pbatt  battery power bounds   pfc    fuel-cell power bounds
trac   traction balance (electric demand <= supply)
vz     v^2 <= z               vgam   1 <= v gamma
batt   alpha ds F_batt^2 <= omega gamma
epi_g  gamma^2 epigraph       epi_o  omega^2 epigraph
====== ==========================================================
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic import ConicProgram, VariableMap
from .powertrain import BatteryParams, SurrogateFits, TrainParams
from .route import SpatialGrid
from .solver import ConeDims

log = logging.getLogger(__name__)

CONCURRENT_FAMILIES = ("dyn", "soc", "omega", "time", "term", "vb", "zb", "socb", "fmb", "brkb",
                       "pm", "pbatt", "pfc", "trac", "vz", "vgam", "batt", "epi_g", "epi_o")
SPEED_FAMILIES = ("dyn", "time", "term", "vb", "zb", "fmb", "brkb", "pm", "vz", "vgam", "epi_g")
EMS_FAMILIES = ("soc", "omega", "term", "socb", "pbatt", "pfc", "trac", "batt", "epi_o")


class FormulationError(ValueError):
    pass


class InfeasibleByConstruction(FormulationError):
    """The target time is below what the speed limits allow."""

    def __init__(self, tau: float, lower_bound: float):
        super().__init__(
            f"target time {tau:.6g} s is below the time lower bound {lower_bound:.6g} s "
            f"(dwell time plus the fastest run the speed and force limits allow)")
        self.tau = tau
        self.lower_bound = lower_bound


@dataclass(frozen=True)
class Weights:
    gamma: float = 1.0
    omega: float = 1.0


class Affine:
    """A batch of ``K`` affine expressions ``sum coef * x[col] + const``."""

    __slots__ = ("K", "terms", "const")

    def __init__(self, K: int, terms=None, const=0.0):
        self.K = K
        self.terms = [] if terms is None else terms
        self.const = np.broadcast_to(np.asarray(const, dtype=float), (K,)).copy()

    @classmethod
    def var(cls, cols, coef=1.0):
        cols = np.asarray(cols, dtype=int)
        return cls(cols.size, [(cols, np.broadcast_to(np.asarray(coef, float), cols.shape).copy())])

    @classmethod
    def constant(cls, K, value):
        return cls(K, [], value)

    def __add__(self, other):
        if not isinstance(other, Affine):
            return Affine(self.K, list(self.terms), self.const + other)
        return Affine(self.K, self.terms + other.terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, Affine) else -np.asarray(other, float))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k):
        k = np.asarray(k, dtype=float)
        return Affine(self.K, [(c, v * k) for c, v in self.terms], self.const * k)

    __rmul__ = __mul__


class _Block:
    def __init__(self, label, kind, exprs, dim):
        self.label = label
        self.kind = kind      # "eq" | "lin" | "soc"
        self.exprs = exprs    # list of Affine (one per cone component; a single one for eq/lin)
        self.dim = dim
        self.K = exprs[0].K


class Assembler:
    """Collects constraint blocks, then emits a scaled :class:`ConicProgram`."""

    def __init__(self, n_vars: int):
        self.n = n_vars
        self.blocks: list[_Block] = []

    def eq(self, label, expr: Affine):
        """``expr == 0``."""
        if expr.K:
            self.blocks.append(_Block(label, "eq", [expr], 1))

    def nonneg(self, label, expr: Affine):
        """``expr >= 0``."""
        if expr.K:
            self.blocks.append(_Block(label, "lin", [expr], 1))

    def soc(self, label, comps: list[Affine]):
        """``comps[0] >= ||comps[1:]||`` for each of the ``K`` batch members."""
        if comps[0].K:
            self.blocks.append(_Block(label, "soc", comps, len(comps)))

    def rotated(self, label, x: list[Affine], y: Affine, w: Affine):
        """``||x||^2 <= y w`` with ``y, w >= 0``, as ``||(2x, y - w)|| <= y + w``."""
        self.soc(label, [y + w] + [2.0 * xi for xi in x] + [y - w])

    @staticmethod
    def _triplets(expr: Affine, row0: np.ndarray):
        rows, cols, vals = [], [], []
        for c, v in expr.terms:
            keep = v != 0
            # a single-row batch may carry a whole sum in one term
            r = row0 if c.size == row0.size else np.full(c.size, row0[0])
            rows.append(r[keep])
            cols.append(c[keep])
            vals.append(v[keep])
        return rows, cols, vals

    def build(self, c_phys: np.ndarray, var_scale: np.ndarray, obj_offset: float = 0.0,
              meta: dict | None = None) -> ConicProgram:
        D = np.asarray(var_scale, dtype=float)
        eq_blocks = [b for b in self.blocks if b.kind == "eq"]
        lin_blocks = [b for b in self.blocks if b.kind == "lin"]
        soc_blocks = [b for b in self.blocks if b.kind == "soc"]

        labels: dict[str, tuple[str, list]] = {}

        def emit(blocks, start):
            rows, cols, vals, rhs, groups = [], [], [], [], []
            r = start
            for b in blocks:
                K, d = b.K, b.dim
                base = r + np.arange(K) * d
                block_rhs = np.zeros((K, d))
                for j, e in enumerate(b.exprs):
                    rr, cc, vv = self._triplets(e, base + j)
                    rows += rr
                    cols += cc
                    vals += vv
                    block_rhs[:, j] = e.const
                rhs.append(block_rhs.ravel())
                groups.append((base, K, d))
                labels.setdefault(b.label, ("eq" if b.kind == "eq" else "cone", []))[1].append(
                    (base[:, None] + np.arange(d)[None, :]).ravel())
                r += K * d
            def cat(x, dt):
                return np.concatenate(x).astype(dt) if x else np.zeros(0, dt)
            return cat(rows, int), cat(cols, int), cat(vals, float), cat(rhs, float), groups, r

        # equalities: expr == 0  ->  A x = -const
        er, ec, ev, econst, egroups, m_eq = emit(eq_blocks, 0)
        A = sp.csr_matrix((ev * D[ec], (er, ec)), shape=(m_eq, self.n))
        b = -econst
        # cone rows: s = expr = coef x + const  ->  G = -coef, h = const
        lr, lc, lv, lconst, lgroups, m_lin = emit(lin_blocks, 0)
        sr, sc_, sv, sconst, sgroups, m_all = emit(soc_blocks, m_lin)
        G = sp.csr_matrix((-np.concatenate([lv, sv]) * D[np.concatenate([lc, sc_])],
                           (np.concatenate([lr, sr]), np.concatenate([lc, sc_]))), shape=(m_all, self.n))
        h = np.concatenate([lconst, sconst])

        # row equilibration: equality and orthant rows individually, cone blocks as a whole
        A, b = _normalise_rows(A, b)
        rscale = np.ones(m_all)
        mag = _row_max(G)
        lin_mag = mag[:m_lin]
        rscale[:m_lin] = np.where(lin_mag > 0, 1.0 / np.where(lin_mag > 0, lin_mag, 1.0), 1.0)
        for base, K, d in sgroups:
            idx = base[:, None] + np.arange(d)[None, :]
            blk = np.maximum(mag[idx].max(axis=1), np.abs(h[idx]).max(axis=1))
            rscale[idx] = np.where(blk > 0, 1.0 / np.where(blk > 0, blk, 1.0), 1.0)[:, None]
        G = sp.diags(rscale) @ G
        h = h * rscale

        c = np.asarray(c_phys, dtype=float) * D
        obj_scale = float(np.abs(c).max()) or 1.0
        dims = ConeDims(m_lin, tuple(int(d) for base, K, d in sgroups for _ in range(K)))
        row_labels = {k: (kind, np.sort(np.concatenate(parts))) for k, (kind, parts) in labels.items()}
        return ConicProgram(c / obj_scale, A.tocsr(), b, G.tocsr(), h, dims, var_scale=D,
                            obj_scale=obj_scale, obj_offset=obj_offset, meta=meta or {},
                            row_labels=row_labels)


def _row_max(M: sp.csr_matrix) -> np.ndarray:
    M = abs(M.tocsr())
    out = np.zeros(M.shape[0])
    nz = np.diff(M.indptr) > 0
    if nz.any():
        out[nz] = np.maximum.reduceat(M.data, M.indptr[:-1][nz])
    return out


def _normalise_rows(A: sp.csr_matrix, b: np.ndarray):
    mag = _row_max(A)
    s = np.where(mag > 0, 1.0 / np.where(mag > 0, mag, 1.0), 1.0)
    return sp.diags(s) @ A, b * s


# ---------------------------------------------------------------------------
# layout helpers

class _Layout:
    def __init__(self):
        self.n = 0
        self.slots: dict[str, np.ndarray] = {}
        self.aux: dict[str, np.ndarray] = {}
        self.scale: dict[str, float] = {}

    def add(self, name, size, scale, aux=False):
        idx = np.arange(self.n, self.n + size)
        self.n += size
        (self.aux if aux else self.slots)[name] = idx
        self.scale[name] = scale
        return idx

    def var_scale(self):
        D = np.ones(self.n)
        for name, idx in list(self.slots.items()) + list(self.aux.items()):
            D[idx] = self.scale[name]
        return D


def _references(grid: SpatialGrid, params: TrainParams, batt: BatteryParams | None,
                fits: SurrogateFits | None):
    """Per-element magnitudes used to scale variables and cone rows.

    Returns node speed scale, interval force scales for the motor and for the
    energy sources, and the interval scale of the battery auxiliary variable.
    Dwell samples crawl at ``sqrt(z_stop)`` so their inverse speed, and the
    fictitious source forces that scale with it, are much larger.
    """
    vstop = math.sqrt(grid.z_stop)
    vr = np.where(grid.pinned, vstop, np.maximum(grid.v_max, vstop))
    f_r = float(max(abs(params.f_m_min), params.f_m_max))
    K = grid.N
    p_src = params.p_m_max if batt is None else max(batt.p_max, params.n_fc * params.p_fc_max)
    f_src = np.maximum(f_r, p_src / vr[:K])
    om_r = np.ones(K)
    if fits is not None:
        om_r = np.maximum(fits.soc.alpha * grid.ds * f_src**2 * vr[:K], 1e-12)
    return vr, f_r, f_src, om_r


def reachable_time_bound(grid: SpatialGrid, params: TrainParams) -> float:
    """Journey-time lower bound that also respects traction and braking limits.

    A forward pass caps kinetic energy by full traction from rest, a backward
    pass by full braking to the next stop.  Drag and power limits are dropped
    so both caps are optimistic and the bound stays a bound.
    """
    n, K = grid.n, grid.N
    drive = grid.driving_intervals.astype(float)
    base = (params.a + params.m * params.g * np.sin(grid.theta)) * drive
    kk = 2.0 * grid.ds / params.m_eq
    up = np.empty(n)
    up[0] = grid.z_stop
    for k in range(K):
        up[k + 1] = grid.z_stop if grid.pinned[k + 1] else min(
            grid.z_max[k + 1], up[k] + kk[k] * (params.f_m_max - base[k]))
    down = np.empty(n)
    down[-1] = grid.z_stop
    f_stop = -(params.f_m_min + params.f_brk_min)
    for k in range(K - 1, -1, -1):
        if grid.pinned[k]:
            down[k] = grid.z_stop
            continue
        shrink = 1.0 - kk[k] * params.c * drive[k]
        extra = kk[k] * (f_stop + base[k] + params.b * drive[k] * grid.v_max[k])
        down[k] = min(grid.z_max[k], (down[k + 1] + extra) / shrink) if shrink > 0 else grid.z_max[k]
    zcap = np.maximum(np.minimum(up, down), grid.z_stop)
    vcap = np.minimum(np.sqrt(zcap), np.maximum(grid.v_max, math.sqrt(grid.z_stop)))
    return float((grid.ds / vcap[:K]).sum())


def check_time(grid: SpatialGrid, params: TrainParams | None = None, warn_margin: float = 0.01) -> float:
    """Raise if the target time is unreachable; return the lower bound used."""
    if grid.target_time is None:
        raise FormulationError("grid has no target time")
    lb = grid.time_lower_bound()
    if params is not None:
        lb = max(lb, reachable_time_bound(grid, params))
    if grid.target_time < lb:
        raise InfeasibleByConstruction(grid.target_time, lb)
    if grid.target_time < lb * (1 + warn_margin):
        log.warning("target time %.6g s is within %.0f%% of the time lower bound %.6g s",
                    grid.target_time, 100 * warn_margin, lb)
    return lb


def _ext(grid: SpatialGrid, params: TrainParams):
    """External force split into ``(const, coef_v, coef_z)`` per interval."""
    drive = grid.driving_intervals.astype(float)
    const = (params.a + params.m * params.g * np.sin(grid.theta)) * drive
    return const, params.b * drive, params.c * drive


def _speed_block(asm: Assembler, L: _Layout, grid: SpatialGrid, params: TrainParams, vr: np.ndarray):
    """Kinematics shared by the concurrent and speed-only programs."""
    n, K = grid.n, grid.N
    v, z, g = L.slots["v"], L.slots["z"], L.slots["gamma"]
    fm, fb = L.slots["f_m"], L.slots["f_brk"]
    k = np.arange(K)
    ds = grid.ds
    kk = 2.0 * ds / params.m_eq
    e0, ev, ez = _ext(grid, params)
    # z[k+1] = z[k] + kk (F_m + F_brk) - kk (e0 + ev v[k] + ez z[k])
    asm.eq("dyn", Affine.var(z[k + 1]) - Affine.var(z[k], 1 - kk * ez) - Affine.var(fm[k], kk)
           - Affine.var(fb[k], kk) + Affine.var(v[k], kk * ev) + kk * e0)
    asm.eq("time", Affine(1, [(g[:K], ds)], -grid.target_time))
    pinned = np.flatnonzero(grid.pinned)
    term = np.array([0, n - 1])
    asm.eq("term", Affine.var(z[term]) - grid.z_stop)
    dwell = np.setdiff1d(pinned, term)
    asm.eq("dwell", Affine.var(z[dwell]) - grid.z_stop)
    vs = math.sqrt(grid.z_stop)
    asm.eq("pin", Affine.var(v[[n - 1]]) - vs)
    asm.eq("pin", Affine.var(g[[n - 1]]) - 1.0 / vs)

    free = np.arange(n - 1)
    asm.nonneg("vb", Affine.var(v[free], -1.0) + grid.v_max[free])
    has_lo = grid.v_min[free] > 0
    asm.nonneg("vb", Affine.var(v[free[has_lo]]) - grid.v_min[free[has_lo]])
    unp = np.flatnonzero(~grid.pinned)
    asm.nonneg("zb", Affine.var(z[unp], -1.0) + grid.z_max[unp])
    asm.nonneg("zb", Affine.var(z[unp]) - grid.z_min[unp])
    asm.nonneg("fmb", Affine.var(fm, -1.0) + params.f_m_max)
    asm.nonneg("fmb", Affine.var(fm) - params.f_m_min)
    asm.nonneg("brkb", Affine.var(fb, -1.0))
    asm.nonneg("brkb", Affine.var(fb) - params.f_brk_min)
    # P_min gamma <= F_m <= P_max gamma
    asm.nonneg("pm", Affine.var(g[k], params.p_m_max) - Affine.var(fm))
    asm.nonneg("pm", Affine.var(fm) - Affine.var(g[k], params.p_m_min))
    # v^2 <= z and 1 <= v gamma on every free node
    r = vr[free]
    asm.rotated("vz", [Affine.var(v[free], 1 / r)], Affine.var(z[free], 1 / r**2),
                Affine.constant(free.size, 1.0))
    asm.rotated("vgam", [Affine.constant(free.size, 1.0)], Affine.var(v[free], 1 / r),
                Affine.var(g[free], r))
    return free


def build_concurrent(grid: SpatialGrid, params: TrainParams, batt: BatteryParams, fits: SurrogateFits,
                     weights: Weights = Weights()) -> tuple[ConicProgram, VariableMap]:
    """Joint speed and energy-management program."""
    fits.check()
    check_time(grid, params)
    n, K = grid.n, grid.N
    vr, f_r, f_src, om_r = _references(grid, params, batt, fits)
    L = _Layout()
    v = L.add("v", n, vr)
    z = L.add("z", n, vr**2)
    zeta = L.add("zeta", n, 10.0)
    g = L.add("gamma", n, 1.0 / vr)
    dz = L.add("dzeta", K, om_r)
    om = L.add("omega", K, om_r)
    fm = L.add("f_m", K, f_r)
    L.add("f_brk", K, f_r)
    ffc = L.add("f_fc", K, f_src / params.n_fc)
    fbt = L.add("f_batt", K, f_src)
    tg = L.add("t_gamma", n - 1, 1.0 / vr[:K] ** 2, aux=True)
    to = L.add("t_omega", K, om_r**2, aux=True)
    asm = Assembler(L.n)
    free = _speed_block(asm, L, grid, params, vr)
    _energy_block(asm, grid, params, batt, fits, vr, f_src, om_r,
                  zeta=zeta, dz=dz, om=om, ffc=ffc, fbt=fbt, to=to,
                  gamma=Affine.var(g[:K]), fm=fm, z=z)
    r = vr[free]
    asm.rotated("epi_g", [Affine.var(g[free], r)], Affine.var(tg, r**2), Affine.constant(free.size, 1.0))

    c = np.zeros(L.n)
    c[ffc] = params.n_fc * fits.fuel_cell.p0 * grid.ds
    c[z[:K]] += params.n_fc * fits.fuel_cell.p1 * grid.ds
    c[tg] = weights.gamma
    c[to] = weights.omega
    offset = weights.gamma / grid.z_stop
    prog = asm.build(c, L.var_scale(), offset, meta={"formulation": "concurrent", "N": grid.N, "n_nodes": n})
    vm = VariableMap(n, L.n, dict(L.slots), dict(L.aux))
    return prog, vm


def _energy_block(asm, grid, params, batt, fits, vr, f_src, om_r, *, zeta, dz, om, ffc, fbt, to,
                  gamma: Affine, fm, z, fm_const=None, z_const=None):
    """Battery, fuel cell and traction-balance constraints.

    With ``fm``/``z`` given as column indices the traction demand is coned;
    with ``fm_const``/``z_const`` the speed profile is fixed and the demand
    becomes a number.  ``gamma`` is an affine batch (possibly constant).
    """
    n, K = grid.n, grid.N
    k = np.arange(K)
    ds = grid.ds
    asm.eq("soc", Affine.var(zeta[k + 1]) - Affine.var(zeta[k]) + Affine.var(dz))
    asm.eq("omega", Affine.var(om) - Affine.var(dz) + Affine.var(fbt, fits.soc.beta * ds))
    asm.eq("term", Affine.var(zeta[[0, n - 1]]) - batt.soc0)
    mid = np.arange(1, n - 1)
    asm.nonneg("socb", Affine.var(zeta[mid], -1.0) + batt.soc_max)
    asm.nonneg("socb", Affine.var(zeta[mid]) - batt.soc_min)
    asm.nonneg("pbatt", gamma * batt.p_max - Affine.var(fbt))
    asm.nonneg("pbatt", Affine.var(fbt) - gamma * batt.p_min)
    asm.nonneg("pfc", gamma * params.p_fc_max - Affine.var(ffc))
    asm.nonneg("pfc", Affine.var(ffc) - gamma * params.p_fc_min)

    q = fits.motor
    supply = Affine.var(ffc, float(params.n_fc)) + Affine.var(fbt) - gamma * params.p_aux
    if fm_const is None:
        # q_m(F, z) + P_aux gamma <= n_fc F_fc + F_batt
        w = supply - q.p00 - Affine.var(z[k], q.p10) - Affine.var(fm, q.p01)
        H = q.hessian_form()
        evals, U = np.linalg.eigh(H)
        keep = evals > 1e-14 * max(evals.max(), 1e-300)
        xs = []
        for lam, u in zip(evals[keep], U[:, keep].T):
            # sqrt(lam) * (u0 z + u1 F) is one component of L^T (z, F)
            xs.append(Affine.var(z[k], math.sqrt(lam) * u[0]) + Affine.var(fm, math.sqrt(lam) * u[1]))
        if xs:
            kap = f_src
            asm.rotated("trac", [x * (1.0 / np.sqrt(kap)) for x in xs], w * (1.0 / kap),
                        Affine.constant(K, 1.0))
        else:
            asm.nonneg("trac", w)
    else:
        demand = q(fm_const, z_const[:K])
        asm.nonneg("trac", supply - demand)

    # alpha ds F_batt^2 <= omega gamma (dwell intervals included)
    a_ds = fits.soc.alpha * ds
    r = vr[:K]
    asm.rotated("batt", [Affine.var(fbt, 1.0 / f_src)], Affine.var(om, 1.0 / (a_ds * f_src**2 * r)),
                gamma * r)
    asm.rotated("epi_o", [Affine.var(om, 1.0 / om_r)], Affine.var(to, 1.0 / om_r**2), Affine.constant(K, 1.0))


def build_speed_only(grid: SpatialGrid, params: TrainParams,
                     weights: Weights = Weights()) -> tuple[ConicProgram, VariableMap]:
    """Speed planning with an ideal motor: cost is traction work plus ``gamma^2``."""
    check_time(grid, params)
    n, K = grid.n, grid.N
    vr, f_r, _, _ = _references(grid, params, None, None)
    L = _Layout()
    L.add("v", n, vr)
    L.add("z", n, vr**2)
    g = L.add("gamma", n, 1.0 / vr)
    fm = L.add("f_m", K, f_r)
    L.add("f_brk", K, f_r)
    tg = L.add("t_gamma", n - 1, 1.0 / vr[:K] ** 2, aux=True)
    asm = Assembler(L.n)
    free = _speed_block(asm, L, grid, params, vr)
    r = vr[free]
    asm.rotated("epi_g", [Affine.var(g[free], r)], Affine.var(tg, r**2), Affine.constant(free.size, 1.0))
    c = np.zeros(L.n)
    c[fm] = grid.ds
    c[tg] = weights.gamma
    prog = asm.build(c, L.var_scale(), weights.gamma / grid.z_stop,
                     meta={"formulation": "speed-only", "N": grid.N, "n_nodes": n})
    return prog, VariableMap(n, L.n, dict(L.slots), dict(L.aux))


def build_ems_given_speed(grid: SpatialGrid, params: TrainParams, batt: BatteryParams, fits: SurrogateFits,
                          fixed: dict, weights: Weights = Weights(),
                          tol: float = 1e-5) -> tuple[ConicProgram, VariableMap]:
    """Fuel-cell/battery split for a fixed speed profile.

    ``fixed`` maps ``v, z, gamma, f_m, f_brk`` to arrays (``gamma`` defaults
    to ``1/v``; forces default to the values implied by the kinetic-energy
    recursion with no braking).
    """
    fits.check()
    n, K = grid.n, grid.N
    v_f = np.asarray(fixed["v"], float)
    z_f = np.asarray(fixed["z"], float)
    if v_f.shape != (n,) or z_f.shape != (n,):
        raise FormulationError(f"fixed profile must have {n} nodes")
    g_f = np.asarray(fixed.get("gamma", 1.0 / v_f), float)
    if "f_m" in fixed:
        fm_f = np.asarray(fixed["f_m"], float)
        fb_f = np.asarray(fixed.get("f_brk", np.zeros(K)), float)
    else:
        e0, ev, ez = _ext(grid, params)
        fm_f = (z_f[1:] - z_f[:-1]) * params.m_eq / (2 * grid.ds) + e0 + ev * v_f[:-1] + ez * z_f[:-1]
        fb_f = np.zeros(K)
    if np.any(v_f <= 0):
        raise FormulationError("fixed speed must be strictly positive")
    scale_z = max(float(grid.z_max.max()), 1.0)
    bad = np.flatnonzero(np.abs(z_f[grid.pinned] - grid.z_stop) > tol * scale_z)
    if bad.size:
        raise FormulationError(f"fixed profile leaves rest at pinned nodes {np.flatnonzero(grid.pinned)[bad][:5].tolist()}")
    over = np.flatnonzero(v_f[:-1] > grid.v_max[:-1] * (1 + tol) + tol)
    if over.size:
        raise FormulationError(f"fixed speed exceeds the limit at nodes {over[:5].tolist()}")
    if abs(float(g_f[:K] @ grid.ds) - grid.target_time) > 1e-3 * grid.target_time:
        log.warning("fixed profile journey time %.6g s differs from target %.6g s",
                    float(g_f[:K] @ grid.ds), grid.target_time)

    vr, f_r, f_src, om_r = _references(grid, params, batt, fits)
    L = _Layout()
    zeta = L.add("zeta", n, 10.0)
    dz = L.add("dzeta", K, om_r)
    om = L.add("omega", K, om_r)
    ffc = L.add("f_fc", K, f_src / params.n_fc)
    fbt = L.add("f_batt", K, f_src)
    to = L.add("t_omega", K, om_r**2, aux=True)
    asm = Assembler(L.n)
    _energy_block(asm, grid, params, batt, fits, vr, f_src, om_r,
                  zeta=zeta, dz=dz, om=om, ffc=ffc, fbt=fbt, to=to,
                  gamma=Affine.constant(K, g_f[:K]), fm=None, z=None,
                  fm_const=fm_f, z_const=z_f)
    c = np.zeros(L.n)
    c[ffc] = params.n_fc * fits.fuel_cell.p0 * grid.ds
    c[to] = weights.omega
    offset = float(params.n_fc * fits.fuel_cell.p1 * (grid.ds @ z_f[:K])
                   + weights.gamma * (g_f[:-1] ** 2).sum() + weights.gamma * g_f[-1] ** 2)
    prog = asm.build(c, L.var_scale(), offset, meta={"formulation": "ems-given-speed", "N": grid.N, "n_nodes": n})
    fixed_out = {"v": v_f, "z": z_f, "gamma": g_f, "f_m": fm_f, "f_brk": fb_f}
    return prog, VariableMap(n, L.n, dict(L.slots), dict(L.aux), fixed_out)

"""Vectorised operations on products of nonnegative orthants and Lorentz cones.

A cone vector is laid out as ``[orthant (l entries) | soc_1 | soc_2 | ...]``.
Second-order cone blocks are grouped by dimension so that every operation is a
handful of numpy calls regardless of how many blocks there are.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class ConeDims:
    """Dimensions of a product cone: ``l`` orthant entries then SOC blocks ``q``."""

    l: int = 0
    q: tuple[int, ...] = ()

    def __post_init__(self):
        if self.l < 0:
            raise ValueError("orthant dimension must be nonnegative")
        if any(d < 2 for d in self.q):
            raise ValueError("second-order cone blocks need dimension >= 2")
        object.__setattr__(self, "q", tuple(int(d) for d in self.q))

    @property
    def size(self) -> int:
        return self.l + sum(self.q)

    @property
    def degree(self) -> int:
        return self.l + len(self.q)


@dataclass
class Cones:
    dims: ConeDims
    groups: list[tuple[int, np.ndarray]] = field(init=False)

    def __post_init__(self):
        offsets = self.dims.l + np.concatenate(([0], np.cumsum(self.dims.q)[:-1])).astype(int)
        q = np.asarray(self.dims.q, dtype=int)
        self.groups = []
        for d in np.unique(q):
            starts = offsets[q == d]
            self.groups.append((int(d), starts[:, None] + np.arange(d)[None, :]))

    @property
    def size(self) -> int:
        return self.dims.size

    @property
    def degree(self) -> int:
        return self.dims.degree

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[: self.dims.l] = 1.0
        for _, idx in self.groups:
            e[idx[:, 0]] = 1.0
        return e

    def min_eig(self, u: np.ndarray) -> float:
        """Smallest Jordan eigenvalue over all blocks (negative means outside)."""
        vals = [np.inf]
        if self.dims.l:
            vals.append(u[: self.dims.l].min())
        for _, idx in self.groups:
            b = u[idx]
            vals.append(np.min(b[:, 0] - np.linalg.norm(b[:, 1:], axis=1)))
        return float(min(vals))

    def violation(self, u: np.ndarray) -> float:
        return max(0.0, -self.min_eig(u))

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(u)
        l = self.dims.l
        out[:l] = u[:l] * v[:l]
        for _, idx in self.groups:
            ub, vb = u[idx], v[idx]
            res = np.empty_like(ub)
            res[:, 0] = np.einsum("ij,ij->i", ub, vb)
            res[:, 1:] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
            out[idx] = res
        return out

    def divide(self, lam: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Solve ``lam o x = d`` for ``x`` (``lam`` strictly interior)."""
        out = np.empty_like(d)
        l = self.dims.l
        out[:l] = d[:l] / lam[:l]
        for _, idx in self.groups:
            lb, db = lam[idx], d[idx]
            l0, l1 = lb[:, 0], lb[:, 1:]
            d0, d1 = db[:, 0], db[:, 1:]
            det = (l0 - np.linalg.norm(l1, axis=1)) * (l0 + np.linalg.norm(l1, axis=1))
            x0 = (l0 * d0 - np.einsum("ij,ij->i", l1, d1)) / det
            res = np.empty_like(db)
            res[:, 0] = x0
            res[:, 1:] = (d1 - x0[:, None] * l1) / l0[:, None]
            out[idx] = res
        return out

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        """Largest ``a >= 0`` with ``u + a du`` in the cone (``inf`` if unbounded)."""
        alpha = np.inf
        l = self.dims.l
        if l:
            neg = du[:l] < 0
            if neg.any():
                alpha = min(alpha, float(np.min(-u[:l][neg] / du[:l][neg])))
        for _, idx in self.groups:
            ub, db = u[idx], du[idx]
            a = db[:, 0] ** 2 - np.einsum("ij,ij->i", db[:, 1:], db[:, 1:])
            b = ub[:, 0] * db[:, 0] - np.einsum("ij,ij->i", ub[:, 1:], db[:, 1:])
            c = np.maximum(ub[:, 0] ** 2 - np.einsum("ij,ij->i", ub[:, 1:], ub[:, 1:]), 0.0)
            disc = b * b - a * c
            hit = (a < 0) | ((b < 0) & (disc >= 0))
            if hit.any():
                root = c[hit] / (-b[hit] + np.sqrt(np.maximum(disc[hit], 0.0)))
                alpha = min(alpha, float(np.min(root)))
        return alpha

    def scaling(self, s: np.ndarray, z: np.ndarray) -> "NTScaling":
        return NTScaling(self, s, z)


def _soc_norm(b: np.ndarray) -> np.ndarray:
    n1 = np.linalg.norm(b[:, 1:], axis=1)
    return np.sqrt(np.maximum((b[:, 0] - n1) * (b[:, 0] + n1), 0.0))


class NTScaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lam``.

    ``W`` is symmetric for both cone families, so ``W^T = W``.
    """

    def __init__(self, cones: Cones, s: np.ndarray, z: np.ndarray):
        self.cones = cones
        l = cones.dims.l
        self.d = np.sqrt(s[:l] / z[:l])
        self.blocks = []
        for d, idx in cones.groups:
            sb, zb = s[idx], z[idx]
            sn, zn = _soc_norm(sb), _soc_norm(zb)
            sbar = sb / sn[:, None]
            zbar = zb / zn[:, None]
            gam = np.sqrt((1.0 + np.einsum("ij,ij->i", sbar, zbar)) / 2.0)
            wbar = sbar.copy()
            wbar[:, 0] += zbar[:, 0]
            wbar[:, 1:] -= zbar[:, 1:]
            wbar /= (2.0 * gam)[:, None]
            eta = np.sqrt(sn / zn)
            self.blocks.append((idx, wbar, eta))
        self.lam = self.apply(z)

    def _apply_soc(self, wbar, eta, xb, inverse):
        w0, w1 = wbar[:, 0], wbar[:, 1:]
        x0, x1 = xb[:, 0], xb[:, 1:]
        w1x1 = np.einsum("ij,ij->i", w1, x1)
        sign = -1.0 if inverse else 1.0
        res = np.empty_like(xb)
        res[:, 0] = w0 * x0 + sign * w1x1
        res[:, 1:] = x1 + (sign * x0 + w1x1 / (1.0 + w0))[:, None] * w1
        scale = 1.0 / eta if inverse else eta
        return res * scale[:, None]

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        l = self.cones.dims.l
        out[:l] = self.d * x[:l]
        for idx, wbar, eta in self.blocks:
            out[idx] = self._apply_soc(wbar, eta, x[idx], inverse=False)
        return out

    def apply_inv(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        l = self.cones.dims.l
        out[:l] = x[:l] / self.d
        for idx, wbar, eta in self.blocks:
            out[idx] = self._apply_soc(wbar, eta, x[idx], inverse=True)
        return out

    def squared_triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """COO triplets of the block-diagonal matrix ``W^2``."""
        l = self.cones.dims.l
        rows = [np.arange(l)]
        cols = [np.arange(l)]
        vals = [self.d**2]
        for idx, wbar, eta in self.blocks:
            k, d = idx.shape
            w0, w1 = wbar[:, 0], wbar[:, 1:]
            W = np.empty((k, d, d))
            W[:, 0, 0] = w0
            W[:, 0, 1:] = w1
            W[:, 1:, 0] = w1
            W[:, 1:, 1:] = np.eye(d - 1)[None] + np.einsum("ki,kj->kij", w1, w1) / (1.0 + w0)[:, None, None]
            W2 = np.einsum("kij,kjl->kil", W, W) * (eta**2)[:, None, None]
            rows.append(np.broadcast_to(idx[:, :, None], (k, d, d)).ravel())
            cols.append(np.broadcast_to(idx[:, None, :], (k, d, d)).ravel())
            vals.append(W2.ravel())
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def squared(self) -> sp.csc_matrix:
        r, c, v = self.squared_triplets()
        m = self.cones.size
        return sp.csc_matrix((v, (r, c)), shape=(m, m))

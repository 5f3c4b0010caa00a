"""Standard-form conic programs and the map back to physical trajectory slots.

A :class:`ConicProgram` is

    minimize    c^T x
    subject to  A x = b
                G x + s = h,   s in K = R^l_+ x Q^{q_1} x ... x Q^{q_k}

where ``x`` lives in *scaled* units.  ``x_phys = var_scale * x`` and the
physical objective is ``obj_scale * c^T x + obj_offset``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .solver.cones import ConeDims

#: Slots of the trajectory vector, in the order used by the CSV writer.
TRAJECTORY_FIELDS = ("v", "z", "zeta", "dzeta", "gamma", "omega", "f_m", "f_brk", "f_fc", "f_batt")
NODE_FIELDS = ("v", "z", "zeta", "gamma")
INTERVAL_FIELDS = ("dzeta", "omega", "f_m", "f_brk", "f_fc", "f_batt")


@dataclass
class VariableMap:
    """Indices of each physical quantity inside the stacked decision vector.

    ``slots[name]`` is an integer array, one entry per node (for node fields)
    or per interval (for interval fields).  Quantities that a formulation holds
    fixed are absent from ``slots`` and listed in ``fixed`` with their values.
    ``auxiliary`` holds epigraph variables that have no physical meaning.
    """

    n_nodes: int
    n_vars: int
    slots: dict[str, np.ndarray] = field(default_factory=dict)
    auxiliary: dict[str, np.ndarray] = field(default_factory=dict)
    fixed: dict[str, np.ndarray] = field(default_factory=dict)

    def all_indices(self) -> np.ndarray:
        parts = list(self.slots.values()) + list(self.auxiliary.values())
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)

    def is_bijection(self) -> bool:
        idx = self.all_indices()
        return idx.size == self.n_vars and np.array_equal(np.sort(idx), np.arange(self.n_vars))

    @property
    def n_physical(self) -> int:
        return int(sum(v.size for v in self.slots.values()))

    def gather(self, x_phys: np.ndarray) -> dict[str, np.ndarray]:
        out = {name: np.asarray(x_phys[idx], dtype=float) for name, idx in self.slots.items()}
        for name, value in self.fixed.items():
            out[name] = np.asarray(value, dtype=float).copy()
        return out


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    dims: ConeDims
    var_scale: np.ndarray | None = None
    obj_scale: float = 1.0
    obj_offset: float = 0.0
    meta: dict = field(default_factory=dict)
    # constraint family -> ("eq" | "cone", row indices into A or G)
    row_labels: dict[str, tuple[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        n = self.c.size
        self.A = sp.csr_matrix(self.A) if self.A is not None else sp.csr_matrix((0, n))
        self.G = sp.csr_matrix(self.G) if self.G is not None else sp.csr_matrix((0, n))
        if self.A.shape != (self.b.size, n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.b.size, n)}")
        if self.G.shape != (self.h.size, n):
            raise ValueError(f"G has shape {self.G.shape}, expected {(self.h.size, n)}")
        if self.dims.size != self.h.size:
            raise ValueError(f"cone dimensions sum to {self.dims.size} but G has {self.h.size} rows")
        if self.var_scale is None:
            self.var_scale = np.ones(n)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def n_cones(self) -> int:
        return len(self.dims.q)

    def physical_x(self, x: np.ndarray) -> np.ndarray:
        return self.var_scale * x

    def physical_objective(self, x: np.ndarray) -> float:
        return float(self.obj_scale * (self.c @ x) + self.obj_offset)

    def rows(self, label: str) -> int:
        return int(self.row_labels[label][1].size) if label in self.row_labels else 0

    def coverage(self, required: tuple[str, ...]) -> dict[str, int]:
        """Row counts per constraint family; raises if any required family is empty."""
        counts = {name: self.rows(name) for name in required}
        missing = [name for name, count in counts.items() if count == 0]
        if missing:
            raise AssertionError(f"constraint families without rows: {missing}")
        return counts

    def dump(self, path: str | Path) -> None:
        """Write a plain-text sparse dump (triplets plus cone list).

        Layout::

            # h2rail conic program v1
            n <n> p <p> m <m>
            cones l <l> q <d1> <d2> ...
            c
            <index> <value>          (nonzeros only)
            A
            <row> <col> <value>
            b
            <index> <value>
            G
            <row> <col> <value>
            h
            <index> <value>
        """
        lines = ["# h2rail conic program v1",
                 f"n {self.n} p {self.b.size} m {self.h.size}",
                 "cones l " + str(self.dims.l) + " q " + " ".join(str(d) for d in self.dims.q)]

        def vec(tag, v):
            lines.append(tag)
            for i in np.flatnonzero(v):
                lines.append(f"{i} {v[i]!r}")

        def mat(tag, M):
            lines.append(tag)
            coo = M.tocoo()
            for r, col, val in zip(coo.row, coo.col, coo.data):
                lines.append(f"{r} {col} {val!r}")

        vec("c", self.c)
        mat("A", self.A)
        vec("b", self.b)
        mat("G", self.G)
        vec("h", self.h)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load_dump(cls, path: str | Path) -> "ConicProgram":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        head = lines[1].split()
        n, p, m = int(head[1]), int(head[3]), int(head[5])
        cone_line = lines[2].split()
        l = int(cone_line[2])
        q = tuple(int(t) for t in cone_line[4:])
        sections: dict[str, list[list[str]]] = {}
        current = None
        for line in lines[3:]:
            tok = line.split()
            if len(tok) == 1:
                current = tok[0]
                sections[current] = []
            elif tok:
                sections[current].append(tok)

        def vec(tag, size):
            v = np.zeros(size)
            for i, val in sections.get(tag, []):
                v[int(i)] = float(val)
            return v

        def mat(tag, shape):
            rows = sections.get(tag, [])
            if not rows:
                return sp.csr_matrix(shape)
            r, col, val = zip(*rows)
            return sp.csr_matrix((np.array(val, float), (np.array(r, int), np.array(col, int))), shape=shape)

        return cls(vec("c", n), mat("A", (p, n)), vec("b", p), mat("G", (m, n)), vec("h", m), ConeDims(l, q))

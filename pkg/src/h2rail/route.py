"""Route description, CSV ingestion and discretisation onto the spatial grid.

Route CSV (header required)::

    position_m,gradient_rad,speed_limit_mps
    0,0.0,25
    4000,0.004,25
    10000,0,0

Each row opens a piecewise-constant segment that runs to the next row.  The
last row marks the end of the line; its gradient and limit are ignored.

Stations CSV (header required)::

    position_m,dwell_s
    0,20
    5000,45
    10000,0

Stations are stops: the train is at rest there.  The dwell at the final
station is not part of the journey and is ignored by :func:`discretize`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class RouteError(ValueError):
    pass


class RouteFormatError(RouteError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class CoverageError(RouteError):
    """Speed-limit or gradient segments overlap or leave a gap."""


@dataclass(frozen=True)
class RouteProfile:
    total_length: float
    gradient_points: tuple[tuple[float, float], ...]
    speed_limit_segments: tuple[tuple[float, float, float], ...]
    stations: tuple[tuple[float, float], ...] = ()
    target_time: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "gradient_points", tuple((float(p), float(t)) for p, t in self.gradient_points))
        object.__setattr__(self, "speed_limit_segments",
                           tuple((float(a), float(b), float(v)) for a, b, v in self.speed_limit_segments))
        object.__setattr__(self, "stations", tuple((float(p), float(d)) for p, d in self.stations))
        L = float(self.total_length)
        if not L > 0:
            raise RouteError("total_length must be positive")
        if not self.gradient_points or self.gradient_points[0][0] != 0.0:
            raise CoverageError("gradient points must start at position 0")
        pos = [p for p, _ in self.gradient_points]
        if any(b <= a for a, b in zip(pos, pos[1:])) or pos[-1] >= L:
            raise CoverageError("gradient points must be strictly increasing and inside [0, total_length)")
        segs = sorted(self.speed_limit_segments)
        if not segs:
            raise CoverageError("no speed-limit segments")
        if segs[0][0] > 0:
            raise CoverageError(f"gap in speed limits over [0, {segs[0][0]:g}]")
        for (a0, b0, _), (a1, b1, _) in zip(segs, segs[1:]):
            if a1 < b0:
                raise CoverageError(f"speed-limit segments [{a0:g}, {b0:g}] and [{a1:g}, {b1:g}] overlap")
            if a1 > b0:
                raise CoverageError(f"gap in speed limits over [{b0:g}, {a1:g}]")
        if not math.isclose(segs[-1][1], L, rel_tol=0, abs_tol=1e-9):
            raise CoverageError(f"speed limits end at {segs[-1][1]:g}, route length is {L:g}")
        for a, b, v in segs:
            if b <= a or v <= 0:
                raise CoverageError(f"degenerate speed-limit segment [{a:g}, {b:g}] at {v:g} m/s")
        object.__setattr__(self, "speed_limit_segments", tuple(segs))
        st = [p for p, _ in self.stations]
        if any(b <= a for a, b in zip(st, st[1:])):
            raise RouteError("station positions must be strictly increasing")
        if st and (st[0] < 0 or st[-1] > L):
            raise RouteError("stations must lie within [0, total_length]")
        if any(d < 0 for _, d in self.stations):
            raise RouteError("station dwell must be nonnegative")
        if self.target_time is not None and not self.target_time > 0:
            raise RouteError("target time must be positive")

    def gradient_at(self, s) -> np.ndarray:
        pos = np.array([p for p, _ in self.gradient_points])
        th = np.array([t for _, t in self.gradient_points])
        return th[np.clip(np.searchsorted(pos, s, side="right") - 1, 0, len(pos) - 1)]

    def speed_limit_at(self, s) -> np.ndarray:
        starts = np.array([a for a, _, _ in self.speed_limit_segments])
        lim = np.array([v for _, _, v in self.speed_limit_segments])
        return lim[np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(starts) - 1)]

    def speed_limit_min(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Lowest limit touching each open interval ``(a, b)``."""
        out = np.full(np.shape(a), np.inf)
        for s0, s1, v in self.speed_limit_segments:
            touch = (s0 < b) & (s1 > a)
            out = np.where(touch, np.minimum(out, v), out)
        return out

    def with_target_time(self, tau: float) -> "RouteProfile":
        return RouteProfile(self.total_length, self.gradient_points, self.speed_limit_segments, self.stations, tau)


def _read_rows(path: Path, header: list[str]):
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(text.splitlines())
    try:
        first = next(reader)
    except StopIteration:
        raise RouteFormatError(path, 1, "empty file") from None
    if [h.strip() for h in first] != header:
        raise RouteFormatError(path, 1, f"expected header {','.join(header)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
            continue
        if len(row) != len(header):
            raise RouteFormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
        try:
            rows.append((lineno, [float(c) for c in row]))
        except ValueError:
            raise RouteFormatError(path, lineno, f"non-numeric field in {row!r}") from None
    return rows


def load_route(route_path, stations_path=None, target_time: float | None = None) -> RouteProfile:
    """Read a route CSV (and optional stations CSV) into a validated profile."""
    route_path = Path(route_path)
    rows = _read_rows(route_path, ["position_m", "gradient_rad", "speed_limit_mps"])
    if len(rows) < 2:
        raise RouteFormatError(route_path, rows[0][0] if rows else 2, "need at least a start and an end row")
    for j in range(1, len(rows)):
        (l0, r0), (l1, r1) = rows[j - 1], rows[j]
        if r1[0] <= r0[0]:
            end1 = rows[j + 1][1][0] if j + 1 < len(rows) else r1[0]
            raise CoverageError(
                f"{route_path}:{l1}: segment [{r0[0]:g}, ...] and segment [{r1[0]:g}, {end1:g}] overlap "
                f"(breakpoint {r1[0]:g} m does not follow {r0[0]:g} m)"
            )
    if rows[0][1][0] != 0:
        raise CoverageError(f"{route_path}:{rows[0][0]}: gap over [0, {rows[0][1][0]:g}]")
    total = rows[-1][1][0]
    body = rows[:-1]
    grads = [(r[0], r[1]) for _, r in body]
    segs = []
    for (l0, r0), (_, r1) in zip(rows, rows[1:]):
        if r0[2] <= 0:
            raise RouteFormatError(route_path, l0, "speed limit must be positive")
        if segs and segs[-1][2] == r0[2]:
            segs[-1] = (segs[-1][0], r1[0], r0[2])
        else:
            segs.append((r0[0], r1[0], r0[2]))
    # merge equal consecutive gradients
    merged = [grads[0]]
    for p, t in grads[1:]:
        if t != merged[-1][1]:
            merged.append((p, t))
    stations = []
    if stations_path is not None:
        stations_path = Path(stations_path)
        for lineno, (p, d) in _read_rows(stations_path, ["position_m", "dwell_s"]):
            if d < 0:
                raise RouteFormatError(stations_path, lineno, "dwell must be nonnegative")
            stations.append((p, d))
    return RouteProfile(total, tuple(merged), tuple(segs), tuple(stations), target_time)


def write_route(route: RouteProfile, route_path, stations_path, header_lines: tuple[str, ...] = ()) -> None:
    """Write ``route`` in the two-file CSV format read by :func:`load_route`.

    ``header_lines`` become ``#`` comment rows directly below each header.
    """
    breaks = sorted({p for p, _ in route.gradient_points} | {a for a, _, _ in route.speed_limit_segments})
    with open(route_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position_m", "gradient_rad", "speed_limit_mps"])
        for line in header_lines:
            fh.write(f"# {line}\n")
        for p in breaks:
            w.writerow([repr(float(p)), repr(float(route.gradient_at(p))), repr(float(route.speed_limit_at(p)))])
        w.writerow([repr(float(route.total_length)), "0.0", repr(float(route.speed_limit_segments[-1][2]))])
    with open(stations_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position_m", "dwell_s"])
        for line in header_lines:
            fh.write(f"# {line}\n")
        for p, d in route.stations:
            w.writerow([repr(float(p)), repr(float(d))])


@dataclass(frozen=True)
class SpatialGrid:
    """Discretised route: ``n`` nodes joined by ``n - 1`` intervals.

    Interval ``k`` runs from node ``k`` to node ``k + 1`` and is traversed with
    the speed of node ``k`` (zero-order hold).  ``N`` counts intervals.
    """

    ds: np.ndarray              # interval lengths (m), n - 1
    theta: np.ndarray           # interval gradient (rad), n - 1
    ext_zero: np.ndarray        # external force suppressed on interval, n - 1
    position: np.ndarray        # physical chainage of each node (m), n
    v_max: np.ndarray           # node speed bounds (m/s), n
    v_min: np.ndarray
    z_max: np.ndarray           # node (m/s)^2 bounds
    z_min: np.ndarray
    dwell_mask: np.ndarray      # node is a dwell sample, n
    pinned: np.ndarray          # z fixed to z_stop at node, n
    z_stop: float
    target_time: float | None
    total_length: float
    stations: tuple[tuple[int, float], ...] = field(default=())  # (arrival node, dwell)
    dwell_samples: int = 5

    @property
    def n(self) -> int:
        return int(self.position.size)

    @property
    def N(self) -> int:
        return int(self.ds.size)

    @property
    def n_dwell(self) -> int:
        return int(self.dwell_mask.sum())

    @property
    def driving_intervals(self) -> np.ndarray:
        return ~self.ext_zero

    def time_lower_bound(self) -> float:
        """Journey time if every interval ran at its start-node speed bound."""
        vstop = math.sqrt(self.z_stop)
        vmax = np.where(self.pinned[:-1], vstop, np.maximum(self.v_max[:-1], vstop))
        return float((self.ds / vmax).sum())

    def dwell_time(self) -> np.ndarray:
        """Declared dwell duration represented by each station group."""
        return np.array([
            self.ds[k:k + self.dwell_samples].sum() / math.sqrt(self.z_stop) if d > 0 else 0.0
            for k, d in self.stations
        ])

    def scaled(self, factor: float) -> "SpatialGrid":
        """Same grid with every interval and the target time multiplied by ``factor``."""
        return SpatialGrid(
            self.ds * factor, self.theta, self.ext_zero, self.position * factor, self.v_max, self.v_min,
            self.z_max, self.z_min, self.dwell_mask, self.pinned, self.z_stop,
            None if self.target_time is None else self.target_time * factor,
            self.total_length * factor, self.stations, self.dwell_samples,
        )


def discretize(route: RouteProfile, ds_nominal: float = 10.0, z_stop: float = 0.01,
               dwell_samples: int = 5, v_min: float = 0.0) -> SpatialGrid:
    """Sample ``route`` on a grid of roughly ``ds_nominal`` metre intervals.

    Stations land exactly on nodes.  Every station with positive dwell, except
    the final one, receives ``dwell_samples`` pinned nodes whose outgoing
    intervals have length ``sqrt(z_stop) * dwell / dwell_samples`` and no
    external force, so that crawling through them at ``sqrt(z_stop)`` takes
    exactly the dwell time.
    """
    if not ds_nominal > 0:
        raise RouteError("ds_nominal must be positive")
    if not z_stop > 0:
        raise RouteError("z_stop must be positive")
    if dwell_samples < 1:
        raise RouteError("dwell_samples must be at least 1")
    if any(d < 0 for _, d in route.stations):
        raise RouteError("station dwell must be nonnegative")
    if any(0 < d < 1e-3 for _, d in route.stations):
        raise RouteError("station dwell must be zero or at least 1 ms")
    L = route.total_length
    keys = sorted({0.0, L} | {p for p, _ in route.stations})
    nodes = [0.0]
    for a, b in zip(keys, keys[1:]):
        k = max(1, int(math.ceil((b - a) / ds_nominal - 1e-9)))
        nodes.extend(a + (b - a) * np.arange(1, k + 1) / k)
    nodes = np.array(nodes)
    nodes[-1] = L
    a, b = nodes[:-1], nodes[1:]
    drive_theta = route.gradient_at(0.5 * (a + b))
    drive_lim = route.speed_limit_min(a, b)

    dwell_at = {p: d for p, d in route.stations}
    vstop = math.sqrt(z_stop)
    ds, theta, ext_zero, position = [], [], [], []
    lim_node_left, lim_node_right = [], []
    dwell_mask, pinned = [], []
    stations = []
    n_drive = nodes.size
    for i in range(n_drive):
        p = nodes[i]
        is_stop = i == 0 or i == n_drive - 1 or p in dwell_at
        d = dwell_at.get(p, 0.0)
        left = drive_lim[i - 1] if i > 0 else np.inf
        right = drive_lim[i] if i < n_drive - 1 else np.inf
        if is_stop and i < n_drive - 1 and d > 0:
            stations.append((len(position), d))
            for _ in range(dwell_samples):
                position.append(p)
                dwell_mask.append(True)
                pinned.append(True)
                lim_node_left.append(left)
                lim_node_right.append(right)
                ds.append(vstop * d / dwell_samples)
                theta.append(0.0)
                ext_zero.append(True)
                left = right
        elif is_stop:
            if p in dwell_at:
                stations.append((len(position), 0.0))
        position.append(p)
        dwell_mask.append(False)
        pinned.append(bool(is_stop and not (i < n_drive - 1 and d > 0)))
        lim_node_left.append(left)
        lim_node_right.append(right)
        if i < n_drive - 1:
            ds.append(b[i] - a[i])
            theta.append(drive_theta[i])
            ext_zero.append(False)

    vmax = np.minimum(np.array(lim_node_left), np.array(lim_node_right))
    vmax = np.maximum(vmax, vstop * 1.5)
    vmin = np.full(vmax.shape, float(v_min))
    zmax = vmax**2
    zmin = np.maximum(vmin**2, z_stop)
    return SpatialGrid(
        ds=np.array(ds), theta=np.array(theta), ext_zero=np.array(ext_zero, dtype=bool),
        position=np.array(position), v_max=vmax, v_min=vmin, z_max=zmax, z_min=zmin,
        dwell_mask=np.array(dwell_mask, dtype=bool), pinned=np.array(pinned, dtype=bool),
        z_stop=float(z_stop), target_time=route.target_time, total_length=float(L),
        stations=tuple(stations), dwell_samples=int(dwell_samples),
    )


def synthetic_route(length: float = 10_000.0, stops: int = 3, seed: int = 0, *,
                    line_speed: float = 27.0, dwell: float = 45.0, origin_dwell: float = 20.0,
                    relief: float = 12.0, target_time: float | None = None) -> RouteProfile:
    """Seeded synthetic line with sinusoidal and Gaussian relief.

    ``stops`` counts all stations including both termini.  Gradients are
    piecewise constant over 100 m.  Speed limits vary by segment between 75%
    and 100% of ``line_speed``.
    """
    if not length > 0:
        raise RouteError("length must be positive")
    if stops < 2:
        raise RouteError("a route needs at least two stops (both termini)")
    rng = np.random.default_rng(seed)
    res = 100.0
    s = np.arange(0.0, length, res)
    elev = np.zeros_like(s)
    for _ in range(3):
        wl = rng.uniform(2_000, 12_000)
        elev += rng.uniform(0.3, 1.0) * relief * np.sin(2 * np.pi * s / wl + rng.uniform(0, 2 * np.pi))
    for _ in range(max(1, int(length // 3_000))):
        c, w, amp = rng.uniform(0, length), rng.uniform(300, 1_500), rng.uniform(-1, 1) * relief
        elev += amp * np.exp(-0.5 * ((s - c) / w) ** 2)
    grad = np.arctan(np.gradient(elev, res))
    grad = np.clip(grad, -0.02, 0.02)
    grad_points = [(float(p), float(round(t, 6))) for p, t in zip(s, grad)]

    inner = stops - 2
    if inner:
        base = np.linspace(0, length, stops)[1:-1]
        jitter = rng.uniform(-0.25, 0.25, inner) * length / (stops - 1)
        inner_pos = np.sort(np.round(base + jitter, -1))
    else:
        inner_pos = np.array([])
    stations = [(0.0, origin_dwell)] + [(float(p), dwell) for p in inner_pos] + [(float(length), 0.0)]

    n_seg = max(1, int(length // 4_000))
    cuts = np.sort(np.round(rng.uniform(0, length, n_seg - 1), -2)) if n_seg > 1 else np.array([])
    cuts = np.unique(np.concatenate(([0.0], cuts, [length])))
    segs = []
    for a, b in zip(cuts, cuts[1:]):
        if b > a:
            segs.append((float(a), float(b), float(round(line_speed * rng.uniform(0.75, 1.0), 1))))
    return RouteProfile(float(length), tuple(grad_points), tuple(segs), tuple(stations), target_time)

"""Trajectory parsing and Edie's generalized density and flow.

For a space-time rectangle A, density is the total time spent in A by all
vehicles divided by |A|, and flow is the total distance they travel inside A
divided by |A|. Sampled trajectories are joined by straight segments, and
each segment is split wherever it crosses a grid line.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DroppedVehicles, MissingColumn, NoVehicles, ParseError
from .grid import Grid, normalize

TIME_UNITS = {"s": 1.0, "ms": 1e-3, "min": 60.0}
POSITION_UNITS = {"m": 1.0, "km": 1000.0, "ft": 0.3048}


@dataclass(frozen=True)
class ColumnMapping:
    id_col: str = "id"
    t_col: str = "t"
    x_col: str = "x"
    length_col: str | None = "length"
    time_unit: str = "s"  # s | ms | min | frame
    position_unit: str = "m"
    frame_rate: float | None = None  # frames per second when time_unit == "frame"

    def __post_init__(self):
        if self.time_unit == "frame":
            if not (self.frame_rate and self.frame_rate > 0):
                raise ValueError("time_unit 'frame' needs a positive frame_rate")
        elif self.time_unit not in TIME_UNITS:
            raise ValueError(f"unknown time unit {self.time_unit!r}")
        if self.position_unit not in POSITION_UNITS:
            raise ValueError(f"unknown position unit {self.position_unit!r}")

    @property
    def seconds_per_unit(self):
        if self.time_unit == "frame":
            return 1.0 / self.frame_rate
        return TIME_UNITS[self.time_unit]

    @property
    def meters_per_unit(self):
        return POSITION_UNITS[self.position_unit]


@dataclass(frozen=True, eq=False)
class Vehicle:
    id: str
    length: float  # NaN when the file carries no length column
    t: np.ndarray
    x: np.ndarray


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    vehicles: list = field(default_factory=list)
    has_lengths: bool = True

    def __len__(self):
        return len(self.vehicles)

    def ids(self):
        return [v.id for v in self.vehicles]


def parse_trajectories(path, mapping: ColumnMapping = ColumnMapping()):
    """Read a CSV with one sample per row into per-vehicle, time-sorted trajectories."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            warnings.warn(f"{path}: empty trajectory file", DroppedVehicles)
            return TrajectorySet([], mapping.length_col is not None)
        header = [h.strip() for h in header]
        wanted = [mapping.id_col, mapping.t_col, mapping.x_col]
        if mapping.length_col is not None:
            wanted.append(mapping.length_col)
        for col in wanted:
            if col not in header:
                raise MissingColumn(f"{path}: column {col!r} not found in header {header}")
        idx = [header.index(c) for c in wanted]

        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            vid = row[idx[0]].strip()
            try:
                t = float(row[idx[1]]) * mapping.seconds_per_unit
                x = float(row[idx[2]]) * mapping.meters_per_unit
                length = (float(row[idx[3]]) * mapping.meters_per_unit
                          if mapping.length_col is not None else math.nan)
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", path, lineno) from None
            if not (math.isfinite(t) and math.isfinite(x)):
                raise ParseError("non-finite time or position", path, lineno)
            rows.setdefault(vid, []).append((t, x, length, lineno))

    vehicles, dropped = [], 0
    for vid in sorted(rows, key=_natural_key):
        samples = sorted(rows[vid])
        if len(samples) < 2:
            dropped += 1
            continue
        t = np.array([s[0] for s in samples])
        dup = np.flatnonzero(np.diff(t) <= 0)
        if dup.size:
            raise ParseError(f"vehicle {vid} has repeated time stamp {t[dup[0]]}", path,
                             samples[dup[0] + 1][3])
        x = np.array([s[1] for s in samples])
        length = float(np.mean([s[2] for s in samples]))
        vehicles.append(Vehicle(vid, length, t, x))
    if dropped:
        warnings.warn(f"{path}: dropped {dropped} vehicles with fewer than 2 samples",
                      DroppedVehicles)
    if not vehicles:
        warnings.warn(f"{path}: no usable trajectories", DroppedVehicles)
    return TrajectorySet(vehicles, mapping.length_col is not None)


def _natural_key(s):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def estimate_rho_max(trajs: TrajectorySet, lane_count):
    """Lanes divided by the mean vehicle length."""
    if not trajs.has_lengths:
        raise MissingColumn("trajectories carry no vehicle length column")
    lengths = np.array([v.length for v in trajs.vehicles], dtype=float)
    lengths = lengths[np.isfinite(lengths) & (lengths > 0)]
    if lengths.size == 0:
        raise NoVehicles("no vehicle with a positive length")
    if not lane_count > 0:
        raise ValueError("lane_count must be positive")
    return lane_count / float(lengths.mean())


# ------------------------------------------------------------------ clipping


@dataclass(frozen=True, eq=False)
class EdieMatrices:
    grid: Grid
    density: np.ndarray  # vehicles per meter
    flow: np.ndarray  # vehicles per second
    time_spent: np.ndarray = field(repr=False)  # seconds per cell

    def normalized(self, rho_max):
        """Density matrix divided by ``rho_max`` (clamped above 1 with a warning)."""
        return normalize(self.density, rho_max, self.grid)[0]

    def fd_points(self):
        return np.column_stack([self.density.ravel(), self.flow.ravel()])


def time_edges(grid: Grid):
    """Slab boundaries for a cell-centred grid: stamps are slab midpoints."""
    return grid.t0 - grid.dt / 2 + grid.dt * np.arange(grid.n_t + 1)


def _clip_segment(ta, tb, xa, xb, te, xe):
    """Split one straight segment at grid lines.

    Returns ``(i, j, dt, dx)`` arrays of the pieces whose midpoints fall inside
    the grid.
    """
    s = [0.0, 1.0]
    inner_t = te[(te > ta) & (te < tb)]
    s.extend((inner_t - ta) / (tb - ta))
    if xb != xa:
        lo, hi = min(xa, xb), max(xa, xb)
        inner_x = xe[(xe > lo) & (xe < hi)]
        s.extend((inner_x - xa) / (xb - xa))
    s = np.unique(np.asarray(s))
    ds = np.diff(s)
    mid = 0.5 * (s[:-1] + s[1:])
    tm = ta + mid * (tb - ta)
    xm = xa + mid * (xb - xa)
    i = np.floor((tm - te[0]) / (te[1] - te[0])).astype(int)
    j = np.floor((xm - xe[0]) / (xe[1] - xe[0])).astype(int)
    ok = (i >= 0) & (i < te.size - 1) & (j >= 0) & (j < xe.size - 1) & (ds > 0)
    return i[ok], j[ok], ds[ok] * (tb - ta), ds[ok] * (xb - xa)


def edie_matrices(trajs: TrajectorySet, grid: Grid, direction=1.0):
    """Edie density and flow on ``grid``, whose time stamps are slab midpoints."""
    te, xe = time_edges(grid), grid.edges
    spent = np.zeros(grid.shape)
    travelled = np.zeros(grid.shape)
    for v in trajs.vehicles:
        # skip vehicles entirely outside the window
        if v.t[-1] <= te[0] or v.t[0] >= te[-1]:
            continue
        for a in range(v.t.size - 1):
            i, j, dt, dx = _clip_segment(v.t[a], v.t[a + 1], v.x[a], v.x[a + 1], te, xe)
            np.add.at(spent, (i, j), dt)
            np.add.at(travelled, (i, j), dx)
    area = grid.dt * grid.dx
    return EdieMatrices(grid, spent / area, direction * travelled / area, spent)

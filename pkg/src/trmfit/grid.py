"""Uniform space-time grids, density matrices and the multilevel transfer operators.

Matrices are stored time-major: row ``i`` is time ``t_i`` and row 0 is the
initial time; column ``j`` is the road cell centred at ``x_j``.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AllZeroMatrix, ClampedDensity, DomainError, ShapeMismatch

#: Float drift tolerated outside [0, 1] before a value is rejected.
DRIFT_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``n_t`` time stamps and ``n_x`` cells.

    Time stamps are ``t0 + i*dt``; cell ``j`` is centred at ``x0 + j*dx``.
    """

    n_t: int
    n_x: int
    dt: float
    dx: float
    t0: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if int(self.n_t) != self.n_t or int(self.n_x) != self.n_x:
            raise ValueError("n_t and n_x must be integers")
        if self.n_t < 2:
            raise ValueError(f"need at least 2 time steps, got n_t={self.n_t}")
        if self.n_x < 3:
            raise ValueError(f"need at least 3 cells, got n_x={self.n_x}")
        if not (self.dt > 0 and self.dx > 0):
            raise ValueError("dt and dx must be positive")

    @classmethod
    def cell_centred(cls, x_start, x_end, n_x, t_start, t_end, n_t):
        """Grid whose cells tile ``[x_start, x_end]`` and whose time stamps are
        the centres of ``n_t`` slabs tiling ``[t_start, t_end]``.

        This is the layout used for Edie measurements, where both axes are
        areas rather than instants.
        """
        dx = (x_end - x_start) / n_x
        dt = (t_end - t_start) / n_t
        return cls(n_t, n_x, dt, dx, t_start + dt / 2, x_start + dx / 2)

    @classmethod
    def snapshots(cls, x_start, x_end, n_x, t_end, n_t, t_start=0.0):
        """Grid of ``n_t`` instants spanning ``[t_start, t_end]`` (both included)
        over ``n_x`` cells tiling ``[x_start, x_end]``."""
        dx = (x_end - x_start) / n_x
        dt = (t_end - t_start) / (n_t - 1)
        return cls(n_t, n_x, dt, dx, t_start, x_start + dx / 2)

    @property
    def shape(self):
        return (self.n_t, self.n_x)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_t)

    @property
    def centers(self):
        return self.x0 + self.dx * np.arange(self.n_x)

    @property
    def edges(self):
        return self.x0 - self.dx / 2 + self.dx * np.arange(self.n_x + 1)

    def refine(self, spec: "SubdivisionSpec") -> "Grid":
        """The scheme grid obtained by subdividing each step and cell."""
        fdx = self.dx / spec.p_x
        return Grid(
            n_t=spec.p_t * (self.n_t - 1) + 1,
            n_x=spec.p_x * self.n_x,
            dt=self.dt / spec.p_t,
            dx=fdx,
            t0=self.t0,
            x0=self.x0 - self.dx / 2 + fdx / 2,
        )

    def to_dict(self):
        return {
            "n_t": self.n_t,
            "n_x": self.n_x,
            "dt": self.dt,
            "dx": self.dx,
            "t0": self.t0,
            "x0": self.x0,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            int(d["n_t"]),
            int(d["n_x"]),
            float(d["dt"]),
            float(d["dx"]),
            float(d.get("t0", 0.0)),
            float(d.get("x0", 0.0)),
        )


@dataclass(frozen=True)
class RoadParams:
    rho_max: float  # 1/m
    v_ref: float  # m/s, used only to size the time subdivision

    def __post_init__(self):
        if not (self.rho_max > 0 and self.v_ref > 0):
            raise ValueError("rho_max and v_ref must be positive")


@dataclass(frozen=True)
class SubdivisionSpec:
    p_t: int = 1
    p_x: int = 1

    def __post_init__(self):
        if int(self.p_t) != self.p_t or int(self.p_x) != self.p_x:
            raise ValueError("subdivisions must be integers")
        if self.p_t < 1 or self.p_x < 1:
            raise ValueError(f"subdivisions must be >= 1, got {self.p_t, self.p_x}")

    def fine_shape(self, coarse_shape):
        n_t, n_x = coarse_shape
        return (self.p_t * (n_t - 1) + 1, self.p_x * n_x)

    def coarse_shape(self, fine_shape):
        rows, cols = fine_shape
        if (rows - 1) % self.p_t or cols % self.p_x:
            raise ShapeMismatch(
                f"fine shape {fine_shape} is not a ({self.p_t}, {self.p_x}) subdivision"
            )
        return ((rows - 1) // self.p_t + 1, cols // self.p_x)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Normalized cell-average densities on ``grid``; every entry in [0, 1]."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ShapeMismatch(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("density matrix contains non-finite values")
        if v.min() < -DRIFT_TOL or v.max() > 1 + DRIFT_TOL:
            raise DomainError(
                f"normalized densities must lie in [0, 1], got range [{v.min()}, {v.max()}]"
            )
        v = np.clip(v, 0.0, 1.0)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def to_json(self):
        return {"grid": self.grid.to_dict(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(Grid.from_dict(d["grid"]), np.asarray(d["values"], dtype=float))


def normalize(raw, rho_max, grid=None):
    """Divide raw densities (veh/m) by ``rho_max``.

    Entries that end up above 1 are clamped. Returns ``(normalized, n_clamped)``
    where ``normalized`` is a :class:`DensityMatrix` if ``grid`` is given and a
    plain array otherwise.
    """
    if not rho_max > 0:
        raise ValueError("rho_max must be positive")
    raw = np.asarray(raw, dtype=float)
    if np.any(raw < 0):
        raise DomainError("raw densities must be non-negative")
    u = raw / rho_max
    over = u > 1.0
    n_clamped = int(over.sum())
    if n_clamped:
        warnings.warn(f"{n_clamped} densities exceed rho_max and were clamped", ClampedDensity)
        u = np.where(over, 1.0, u)
    if not np.any(u):
        warnings.warn("every density is zero", AllZeroMatrix)
    if grid is not None:
        return DensityMatrix(grid, u), n_clamped
    return u, n_clamped


def restrict(fine, spec: SubdivisionSpec):
    """Average fine subcells onto coarse cells, sampled at coarse time stamps."""
    fine = np.asarray(fine, dtype=float)
    if fine.ndim != 2:
        raise ShapeMismatch("restrict expects a 2-D matrix")
    n_t, n_x = spec.coarse_shape(fine.shape)
    return fine[:: spec.p_t].reshape(n_t, n_x, spec.p_x).mean(axis=2)


def prolong(coarse, spec: SubdivisionSpec):
    """Piecewise-constant in space, linear in time; the right inverse of :func:`restrict`."""
    coarse = np.asarray(coarse, dtype=float)
    n_t, _ = coarse.shape
    wide = np.repeat(coarse, spec.p_x, axis=1)
    if spec.p_t == 1:
        return wide
    frac = np.arange(spec.p_t) / spec.p_t
    lo, hi = wide[:-1], wide[1:]
    body = lo[:, None, :] + frac[None, :, None] * (hi - lo)[:, None, :]
    return np.vstack([body.reshape(-1, wide.shape[1]), wide[-1:]])


def cfl_max_ratio(v_max):
    """Largest admissible dt/dx for maximal speed ``v_max``."""
    if not v_max > 0:
        raise ValueError("v_max must be positive")
    return 1.0 / (2.0 * v_max)


def minimal_p_t(grid: Grid, p_x, v_max):
    """Smallest time subdivision keeping the scheme grid within the CFL bound."""
    bound = cfl_max_ratio(v_max)
    ratio = grid.dt / grid.dx * p_x
    p_t = max(1, math.ceil(ratio / bound))
    # guard the ceil against round-off on either side
    while p_t > 1 and ratio / (p_t - 1) <= bound:
        p_t -= 1
    while ratio / p_t > bound:
        p_t += 1
    return p_t


# ---------------------------------------------------------------- file formats


def save_matrix_csv(path, grid: Grid, values):
    """Header ``t,<x_0>,<x_1>,...`` then one row per time stamp."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ShapeMismatch(f"values shape {values.shape} != grid shape {grid.shape}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [repr(float(x)) for x in grid.centers])
        for t, row in zip(grid.times, values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def load_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "t":
        raise ShapeMismatch(f"{path}: expected a header starting with 't'")
    xs = np.array([float(x) for x in rows[0][1:]])
    body = np.array([[float(v) for v in r] for r in rows[1:] if r])
    ts, values = body[:, 0], body[:, 1:]
    n_t, n_x = values.shape
    grid = Grid(
        n_t,
        n_x,
        dt=(ts[-1] - ts[0]) / (n_t - 1),
        dx=(xs[-1] - xs[0]) / (n_x - 1),
        t0=float(ts[0]),
        x0=float(xs[0]),
    )
    return grid, values


def save_matrix_json(path, grid: Grid, values, **extra):
    doc = {"grid": grid.to_dict(), "values": np.asarray(values, dtype=float).tolist()}
    doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_matrix_json(path):
    doc = json.loads(Path(path).read_text())
    grid = Grid.from_dict(doc["grid"])
    values = np.asarray(doc["values"], dtype=float)
    if values.shape != grid.shape:
        raise ShapeMismatch(f"{path}: values shape {values.shape} != grid {grid.shape}")
    return grid, values


def load_matrix(path):
    """Dispatch on extension: ``.json`` or CSV."""
    if str(path).endswith(".json"):
        return load_matrix_json(path)
    return load_matrix_csv(path)

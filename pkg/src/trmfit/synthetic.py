"""Synthetic ground truth: a fine Godunov solve sampled onto coarse data grids,
and a TRM-generated dataset with a free-flow to congestion transition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .grid import DensityMatrix, Grid, SubdivisionSpec, restrict
from .rollout import RolloutPlan, bilinear, run_fine
from .schemes import ControlField, Mode, SchemeKind, crop, reference_solve


def bump_profile(x):
    """Smooth multi-bump initial density on [-1.5, 1.5] with values in (0, 1)."""
    x = np.asarray(x, dtype=float)
    return 0.5 * np.exp(-10.0 * x ** 2) + 0.2 * (1.0 + np.cos(10.0 * np.pi * x) * np.exp(-(3.0 * x ** 2 + x)))


def cell_averages(fn, edges, order=6):
    """Gauss-Legendre cell averages of ``fn`` between consecutive ``edges``."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (a + b) + 0.5 * (b - a) * nodes[None, :]
    return 0.5 * (fn(pts) * weights[None, :]).sum(axis=1)


@dataclass(frozen=True)
class ReferenceConfig:
    x_start: float = -1.5
    x_end: float = 1.5
    dx: float = 1e-3
    cfl: float = 0.25  # dt = cfl * dx / v_m
    t_end: float = 1.0
    v_m: float = 1.0
    crop: tuple = (-1.0, 1.0)
    save_every: int = 1

    def __post_init__(self):
        if not self.v_m > 0:
            raise ConfigError("v_m must be positive")
        if not (self.dx > 0 and self.x_end > self.x_start and self.t_end > 0):
            raise ConfigError("reference grid must have positive extent and spacing")
        if not 0 < self.cfl <= 0.5:
            raise ConfigError("cfl must lie in (0, 1/2]")

    def grid(self):
        n_x = int(round((self.x_end - self.x_start) / self.dx))
        dt = self.cfl * self.dx / self.v_m
        n_steps = int(round(self.t_end / dt))
        return Grid(n_steps + 1, n_x, self.t_end / n_steps, self.dx, 0.0, self.x_start + self.dx / 2)


def ground_truth(cfg: ReferenceConfig = ReferenceConfig(), profile=bump_profile):
    """Fine Godunov solution with copied-edge ghosts, cropped to ``cfg.crop``."""
    grid = cfg.grid()
    ic = cell_averages(profile, grid.edges)
    sol = reference_solve(ic, cfg.v_m, grid, boundary="reflexive", save_every=cfg.save_every)
    if cfg.crop is None:
        return sol
    return crop(sol, *cfg.crop)


def _overlap_matrix(src_edges, dst_edges):
    """``(n_dst, n_src)`` matrix of overlap fractions: averages piecewise-constant data."""
    lo = np.maximum(dst_edges[:-1, None], src_edges[None, :-1])
    hi = np.minimum(dst_edges[1:, None], src_edges[None, 1:])
    overlap = np.clip(hi - lo, 0.0, None)
    return overlap / np.diff(dst_edges)[:, None]


def sample(solution: DensityMatrix, n_t, n_x, x_range=None, t_end=None):
    """Cell averages of a fine solution on an ``n_t`` by ``n_x`` snapshot grid.

    Space: exact averaging of the piecewise-constant fine cells. Time: linear
    interpolation between stored fine rows.
    """
    fg = solution.grid
    x_start, x_end = x_range if x_range is not None else (fg.edges[0], fg.edges[-1])
    t_end = fg.times[-1] if t_end is None else t_end
    if x_start < fg.edges[0] - 1e-9 or x_end > fg.edges[-1] + 1e-9 or t_end > fg.times[-1] + 1e-9:
        raise ShapeMismatch("requested data grid extends beyond the reference solution")
    data_grid = Grid.snapshots(x_start, x_end, n_x, t_end, n_t, fg.t0)
    A = _overlap_matrix(fg.edges, data_grid.edges)
    pos = (data_grid.times - fg.t0) / fg.dt
    i0 = np.clip(np.floor(pos + 1e-9).astype(int), 0, fg.n_t - 1)
    i1 = np.minimum(i0 + 1, fg.n_t - 1)
    w = np.clip(pos - i0, 0.0, 1.0)[:, None]
    rows = (1.0 - w) * solution.values[i0] + w * solution.values[i1]
    return DensityMatrix(data_grid, rows @ A.T)


def two_regime(n_t=31, n_x=21, c_free=0.4, c_jam=0.08, switch=0.5, width=0.1,
               spec=SubdivisionSpec(1, 1), seed=0):
    """Data from a TRM rollout whose coefficient drops in time (free flow, then congestion).

    The initial profile is a smooth random bump; the boundary cells carry an
    inflow that rises and an outflow that saturates, so a queue forms once
    the coefficient drops. Returns ``(data, control)``.
    """
    rng = np.random.default_rng(seed)
    grid = Grid.snapshots(0.0, 1.0, n_x, 1.0, n_t)
    t = grid.times
    x = grid.centers
    base = 0.25 + 0.1 * np.sin(2 * np.pi * (x + rng.uniform()))
    values = np.zeros((n_t, n_x))
    values[0] = base
    values[:, 0] = 0.25 + 0.35 * t
    values[:, -1] = 0.3 + 0.6 * t
    coeff = c_jam + (c_free - c_jam) / (1.0 + np.exp((t - switch) / (width / 4)))
    control = ControlField(Mode.TIME, coeff)
    plan = RolloutPlan(grid, spec, SchemeKind.TRM, DensityMatrix(grid, values))
    fine = run_fine(plan, bilinear(control.field(n_x, n_t), spec.p_t, spec.p_x))
    coarse = restrict(fine, spec)
    return DensityMatrix(grid, coarse), control

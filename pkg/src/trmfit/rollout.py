"""The discrete dynamical system on the (possibly subdivided) scheme grid.

Initial and boundary values always come from a data matrix: row 0 is copied
onto every subcell, and the subcells of the first and last data cells follow
the data boundary columns, linearly interpolated between coarse time stamps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyObservationSet, ShapeMismatch
from .grid import DensityMatrix, Grid, SubdivisionSpec, restrict
from .schemes import ControlField, SchemeKind, advance, check_coefficients


@dataclass(frozen=True, eq=False)
class RolloutPlan:
    data_grid: Grid
    spec: SubdivisionSpec
    kind: SchemeKind
    boundary_source: DensityMatrix

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind.parse(self.kind))
        if self.boundary_source.grid != self.data_grid:
            raise ShapeMismatch("boundary_source grid differs from data_grid")

    @property
    def fine_grid(self):
        return self.data_grid.refine(self.spec)

    @property
    def n_steps(self):
        """Number of fine time steps M = p_t * (n_t - 1)."""
        return self.spec.p_t * (self.data_grid.n_t - 1)

    @property
    def n_fine(self):
        return self.spec.p_x * self.data_grid.n_x

    @property
    def interior(self):
        """Slice of fine cells updated by the scheme (all subcells of data cells 1..n_x-2)."""
        p = self.spec.p_x
        return slice(p, p * (self.data_grid.n_x - 1))

    def boundary_values(self):
        """``(M + 1, 2)`` array: the injected left and right fine boundary values per fine row."""
        u = self.boundary_source.values[:, [0, -1]]
        p_t = self.spec.p_t
        frac = (np.arange(self.n_steps + 1) % p_t) / p_t
        n = np.minimum(np.arange(self.n_steps + 1) // p_t, self.data_grid.n_t - 1)
        nxt = np.minimum(n + 1, self.data_grid.n_t - 1)
        return (1.0 - frac)[:, None] * u[n] + frac[:, None] * u[nxt]

    def initial_state(self):
        return np.repeat(self.boundary_source.values[0], self.spec.p_x)


# ------------------------------------------------------ control interpolation


def time_weights(n_t, p_t):
    """``(M, n_t)`` matrix blending coarse time knots onto fine steps 0..M-1."""
    m_steps = p_t * (n_t - 1)
    W = np.zeros((m_steps, n_t))
    m = np.arange(m_steps)
    n, frac = m // p_t, (m % p_t) / p_t
    W[m, n] = 1.0 - frac
    W[m, n + 1] += frac
    return W


def space_weights(n_x, p_x):
    """``(p_x n_x + 1, n_x + 1)`` matrix blending coarse interfaces onto fine ones."""
    n_fine = p_x * n_x
    W = np.zeros((n_fine + 1, n_x + 1))
    k = np.arange(n_fine + 1)
    j, frac = k // p_x, (k % p_x) / p_x
    W[k, j] = 1.0 - frac
    inner = frac > 0
    W[k[inner], j[inner] + 1] = frac[inner]
    return W


def bilinear(field, p_t, p_x):
    """Bilinear interpolation of an ``(n_x + 1, n_t)`` interface field.

    Returns the ``(M, p_x n_x + 1)`` fine field indexed ``[fine step, fine interface]``.
    """
    field = np.asarray(field, dtype=float)
    n_if, n_t = field.shape
    return time_weights(n_t, p_t) @ field.T @ space_weights(n_if - 1, p_x).T


def interpolate_control(plan: RolloutPlan, control: ControlField):
    g = plan.data_grid
    fine = bilinear(control.field(g.n_x, g.n_t), plan.spec.p_t, plan.spec.p_x)
    check_coefficients(fine)
    return fine


# ------------------------------------------------------------------ rollouts


def iterate(plan: RolloutPlan, fine_control):
    """Yield ``(m, state)`` for fine rows m = 0..M. The yielded array is reused."""
    fine_control = np.asarray(fine_control, dtype=float)
    if fine_control.shape != (plan.n_steps, plan.n_fine + 1):
        raise ShapeMismatch(
            f"fine control shape {fine_control.shape} != {(plan.n_steps, plan.n_fine + 1)}"
        )
    p = plan.spec.p_x
    bnd = plan.boundary_values()
    u = plan.initial_state()
    yield 0, u
    kind = plan.kind
    for m in range(plan.n_steps):
        nxt = np.empty_like(u)
        nxt[1:-1] = advance(kind, u, fine_control[m])
        nxt[:p] = bnd[m + 1, 0]
        nxt[-p:] = bnd[m + 1, 1]
        u = np.clip(nxt, 0.0, 1.0)
        yield m + 1, u


def run_fine(plan: RolloutPlan, fine_control):
    out = np.empty((plan.n_steps + 1, plan.n_fine))
    for m, u in iterate(plan, fine_control):
        out[m] = u
    return out


def run(plan: RolloutPlan, control: ControlField):
    """Full fine approximation matrix of shape ``(M + 1, p_x n_x)``."""
    return run_fine(plan, interpolate_control(plan, control))


def run_final(plan: RolloutPlan, control: ControlField):
    """Streaming rollout that keeps only the last state."""
    u = None
    for _, u in iterate(plan, interpolate_control(plan, control)):
        pass
    return u.copy()


# --------------------------------------------------------------- comparisons


def check_observed(observed_cols, n_x):
    cols = np.unique(np.asarray(list(observed_cols), dtype=int))
    if cols.size == 0:
        raise EmptyObservationSet("no observed columns")
    if cols.min() < 1 or cols.max() > n_x - 2:
        raise ShapeMismatch(f"observed columns must lie in 1..{n_x - 2}, got {cols.tolist()}")
    return cols


def residuals(fine, data: DensityMatrix, spec: SubdivisionSpec, observed_cols):
    """Restricted misfit on rows 1.. and observed columns, zero elsewhere."""
    coarse = restrict(fine, spec)
    if coarse.shape != data.shape:
        raise ShapeMismatch(f"restricted shape {coarse.shape} != data shape {data.shape}")
    mask = np.zeros(data.grid.n_x, dtype=bool)
    mask[np.asarray(observed_cols, dtype=int)] = True
    r = (coarse - data.values) * mask
    r[0] = 0.0
    return r


def rmse(fine, data: DensityMatrix, spec: SubdivisionSpec, observed_cols):
    cols = check_observed(observed_cols, data.grid.n_x)
    r = residuals(fine, data, spec, cols)
    return float(np.sqrt(np.mean(r[1:, cols] ** 2)))

"""Quadratic flux, the normalized numerical fluxes and the one-step maps.

All three schemes share the conservative form

    U_j' = h(U_{j-1}, U_j, U_{j+1}) + C_j F(U_{j-1}, U_j) - C_{j+1} F(U_j, U_{j+1})

where ``C_j`` is the coefficient of interface ``j`` (between cells ``j-1`` and
``j``) and ``h`` is the identity in the middle cell except for Lax-Friedrichs,
which averages the two neighbours.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import CflViolation, DomainError, ShapeMismatch
from .grid import DRIFT_TOL, DensityMatrix, Grid


class SchemeKind(str, enum.Enum):
    TRM = "trm"
    GODUNOV = "godunov"
    LAX_FRIEDRICHS = "lxf"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "trm": cls.TRM,
            "godunov": cls.GODUNOV,
            "lxf": cls.LAX_FRIEDRICHS,
            "laxfriedrichs": cls.LAX_FRIEDRICHS,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown scheme {value!r}") from None

    @property
    def differentiable(self):
        return self is not SchemeKind.GODUNOV


class Mode(str, enum.Enum):
    """How the interface coefficients are tied across time and space."""

    CONSTANT = "constant"
    TIME = "time"
    SPACE = "space"
    SPACETIME = "spacetime"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "constant": cls.CONSTANT,
            "time": cls.TIME,
            "timevarying": cls.TIME,
            "space": cls.SPACE,
            "spacevarying": cls.SPACE,
            "spacetime": cls.SPACETIME,
            "spacetimevarying": cls.SPACETIME,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown parametrization mode {value!r}") from None

    def param_shape(self, n_x, n_t):
        return {
            Mode.CONSTANT: (),
            Mode.TIME: (n_t,),
            Mode.SPACE: (n_x + 1,),
            Mode.SPACETIME: (n_x + 1, n_t),
        }[self]

    def broadcast(self, params, n_x, n_t):
        """Expand mode-shaped values to the ``(n_x + 1, n_t)`` interface-by-time field."""
        p = np.asarray(params, dtype=float)
        if p.shape != self.param_shape(n_x, n_t):
            raise ShapeMismatch(
                f"{self.value} parameters need shape {self.param_shape(n_x, n_t)}, got {p.shape}"
            )
        if self is Mode.CONSTANT:
            return np.full((n_x + 1, n_t), float(p))
        if self is Mode.TIME:
            return np.broadcast_to(p[None, :], (n_x + 1, n_t)).copy()
        if self is Mode.SPACE:
            return np.broadcast_to(p[:, None], (n_x + 1, n_t)).copy()
        return p.copy()

    def contract(self, field_grad):
        """Adjoint of :meth:`broadcast`: sum a field gradient over the tied axes."""
        g = np.asarray(field_grad, dtype=float)
        if self is Mode.CONSTANT:
            return np.asarray(g.sum())
        if self is Mode.TIME:
            return g.sum(axis=0)
        if self is Mode.SPACE:
            return g.sum(axis=1)
        return g.copy()


@dataclass(frozen=True, eq=False)
class ControlField:
    """Interface coefficients ``C_j^n`` under one of the four parametrizations.

    ``coeffs`` has shape ``()``, ``(n_t,)``, ``(n_x + 1,)`` or ``(n_x + 1, n_t)``
    for the constant, time, space and space-time modes respectively.
    """

    mode: Mode
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        mode = Mode.parse(self.mode)
        c = np.array(self.coeffs, dtype=float)
        want_ndim = {Mode.CONSTANT: 0, Mode.TIME: 1, Mode.SPACE: 1, Mode.SPACETIME: 2}[mode]
        if mode is Mode.CONSTANT and c.size == 1:
            c = c.reshape(())
        if c.ndim != want_ndim:
            raise ShapeMismatch(f"{mode.value} coefficients must be {want_ndim}-D, got {c.shape}")
        check_coefficients(c)
        c.flags.writeable = False
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, c):
        return cls(Mode.CONSTANT, np.asarray(float(c)))

    def field(self, n_x, n_t):
        return self.mode.broadcast(self.coeffs, n_x, n_t)

    def expand(self, n, j):
        """The coefficient ``C_j^n`` of interface ``j`` at time step ``n``."""
        if self.mode is Mode.CONSTANT:
            return float(self.coeffs)
        if self.mode is Mode.TIME:
            return float(self.coeffs[n])
        if self.mode is Mode.SPACE:
            return float(self.coeffs[j])
        return float(self.coeffs[j, n])

    @property
    def n_params(self):
        return int(self.coeffs.size)


def check_coefficients(c):
    c = np.asarray(c, dtype=float)
    if c.size and not (np.all(c > 0.0) and np.all(c < 0.5)):
        raise CflViolation(
            f"scaling coefficients must lie in (0, 1/2), got range [{c.min()}, {c.max()}]"
        )


def flux(u, v_m):
    """Normalized LWR flux ``u * v_m * (1 - u)``."""
    u = np.asarray(u, dtype=float)
    return u * v_m * (1.0 - u)


def _parabola(w):
    return w * (1.0 - w)


def _checked_unit(x, what="density"):
    x = np.asarray(x, dtype=float)
    if x.size and (x.min() < -DRIFT_TOL or x.max() > 1.0 + DRIFT_TOL):
        raise DomainError(f"{what} outside [0, 1]: range [{x.min()}, {x.max()}]")
    return np.clip(x, 0.0, 1.0)


def _flux_trm(u, v):
    return u * (1.0 - v)


def _flux_lxf(u, v):
    return 0.5 * (_parabola(u) + _parabola(v))


def _flux_godunov(u, v):
    fu, fv = _parabola(u), _parabola(v)
    # u <= v: the concave parabola attains its minimum at an endpoint.
    # u > v: the maximum is the vertex if 1/2 lies in [v, u], else an endpoint.
    vertex_inside = (v <= 0.5) & (0.5 <= u)
    falling = np.where(vertex_inside, 0.25, np.maximum(fu, fv))
    return np.where(u <= v, np.minimum(fu, fv), falling)


_FLUXES = {
    SchemeKind.TRM: _flux_trm,
    SchemeKind.LAX_FRIEDRICHS: _flux_lxf,
    SchemeKind.GODUNOV: _flux_godunov,
}


def numerical_flux(kind, u, v):
    """Normalized two-point flux ``F(u, v)`` across an interface."""
    kind = SchemeKind.parse(kind)
    u = _checked_unit(u)
    v = _checked_unit(v)
    out = _FLUXES[kind](u, v)
    return float(out) if np.ndim(out) == 0 else out


def interface_coeffs(control, n):
    """Broadcast a scalar or length ``n + 1`` coefficient vector for ``n`` cells."""
    c = np.asarray(control, dtype=float)
    if c.ndim == 0:
        return np.full(n + 1, float(c))
    if c.shape != (n + 1,):
        raise ShapeMismatch(f"need {n + 1} interface coefficients for {n} cells, got {c.shape}")
    return c


def advance(kind, u, c):
    """Interior update without validation. ``u`` has length n, ``c`` length n + 1.

    Returns the n - 2 new interior values (cells 1 .. n-2).
    """
    F = _FLUXES[kind](u[:-1], u[1:])  # F[k] crosses interface k + 1
    inner = c[1:-1]
    transfer = inner[:-1] * F[:-1] - inner[1:] * F[1:]
    if kind is SchemeKind.LAX_FRIEDRICHS:
        return 0.5 * (u[:-2] + u[2:]) + transfer
    return u[1:-1] + transfer


def step_interior(kind, state, control):
    """One explicit step for cells 1 .. n-2; boundary cells are left to the caller.

    ``control`` is a scalar or the ``n + 1`` interface coefficients at this step.
    Only interfaces 1 .. n-1 enter the update and must lie in (0, 1/2).
    """
    kind = SchemeKind.parse(kind)
    u = _checked_unit(state, "state")
    if u.ndim != 1 or u.size < 3:
        raise ShapeMismatch("state must be a vector with at least 3 cells")
    c = interface_coeffs(control, u.size)
    check_coefficients(c[1:-1])
    return advance(kind, u, c)


# ------------------------------------------------------------ reference solver


def reference_solve(ic, v_m, grid: Grid, boundary="reflexive", kind=SchemeKind.GODUNOV,
                    save_every=1):
    """Roll a scheme forward with ghost-cell boundaries; returns the trajectory.

    ``boundary="reflexive"`` copies the edge cells into the ghosts
    (``U_{-1} = U_0``, ``U_{n} = U_{n-1}``), which lets the edge flux
    ``f(U_0)`` in and ``f(U_{n-1})`` out. ``boundary="wall"`` keeps the ghost
    copies but shuts the two outer interfaces, so no mass crosses them.

    The returned :class:`DensityMatrix` keeps every ``save_every``-th step.
    """
    kind = SchemeKind.parse(kind)
    u = _checked_unit(ic, "initial condition")
    if u.shape != (grid.n_x,):
        raise ShapeMismatch(f"initial condition has {u.size} cells, grid has {grid.n_x}")
    if not v_m > 0:
        raise ValueError("v_m must be positive")
    c = grid.dt / grid.dx * v_m
    if c > 0.5:
        raise CflViolation(f"dt/dx * v_m = {c} exceeds 1/2")
    if boundary not in ("reflexive", "wall"):
        raise ValueError(f"unknown boundary {boundary!r}")
    if (grid.n_t - 1) % save_every:
        raise ShapeMismatch("save_every must divide the number of steps")

    coeffs = np.full(grid.n_x + 3, c)
    if boundary == "wall":
        coeffs[1] = coeffs[-2] = 0.0
    out = np.empty(((grid.n_t - 1) // save_every + 1, grid.n_x))
    out[0] = u
    padded = np.empty(grid.n_x + 2)
    for step in range(1, grid.n_t):
        padded[1:-1] = u
        padded[0], padded[-1] = u[0], u[-1]
        u = np.clip(advance(kind, padded, coeffs), 0.0, 1.0)
        if step % save_every == 0:
            out[step // save_every] = u
    saved = Grid(out.shape[0], grid.n_x, grid.dt * save_every, grid.dx, grid.t0, grid.x0)
    return DensityMatrix(saved, out)


def crop(solution: DensityMatrix, x_lo, x_hi):
    """Keep the cells whose centres lie in ``[x_lo, x_hi]``."""
    xs = solution.grid.centers
    keep = np.flatnonzero((xs >= x_lo) & (xs <= x_hi))
    if keep.size < 3:
        raise ShapeMismatch("crop keeps fewer than 3 cells")
    g = solution.grid
    sub = Grid(g.n_t, keep.size, g.dt, g.dx, g.t0, float(xs[keep[0]]))
    return DensityMatrix(sub, solution.values[:, keep[0]: keep[-1] + 1])

"""Step Jacobians and the two gradient accumulations (forward and backward).

The cost is ``0.5 * sum (M U_hat^i - U^i)^2`` over coarse rows 1.. and the
observed columns, plus ``lam * R(C)`` for the varying modes. Gradients are
taken with respect to the unconstrained parameters ``theta`` where
``C = expit(theta) / 2``.

Backward propagation applies hand-written transposes of the tridiagonal
state Jacobian and the two-band control Jacobian. Forward propagation builds
the dense sensitivity matrix from the sparse matrices instead, so the two
routes share only the entry formulas.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import UnsupportedScheme
from .reparam import logit_c, logit_c_inverse
from .rollout import RolloutPlan, interpolate_control, run_fine, space_weights, time_weights
from .schemes import ControlField, Mode, SchemeKind, _checked_unit, interface_coeffs
from .schemes import check_coefficients


@dataclass(frozen=True, eq=False)
class StepJacobians:
    """Row-indexed bands of ``dH/dU`` (tridiagonal) and ``dH/dC`` (two bands).

    Row ``j`` holds ``dH_j/dU_{j-1} = lower[j]``, ``dH_j/dU_j = diag[j]``,
    ``dH_j/dU_{j+1} = upper[j]``, ``dH_j/dC_j = c_left[j]`` and
    ``dH_j/dC_{j+1} = c_right[j]``.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    c_left: np.ndarray
    c_right: np.ndarray

    @property
    def n(self):
        return self.diag.size

    def state_matrix(self):
        return sparse.diags([self.lower[1:], self.diag, self.upper[:-1]], [-1, 0, 1],
                            shape=(self.n, self.n), format="csr")

    def control_matrix(self):
        return sparse.diags([self.c_left, self.c_right], [0, 1],
                            shape=(self.n, self.n + 1), format="csr")

    def rmatvec_state(self, delta):
        out = self.diag * delta
        out[:-1] += self.lower[1:] * delta[1:]
        out[1:] += self.upper[:-1] * delta[:-1]
        return out

    def rmatvec_control(self, delta):
        out = np.zeros(self.n + 1)
        out[:-1] += self.c_left * delta
        out[1:] += self.c_right * delta
        return out


def _trm_entries(ul, uc, ur, cl, cr):
    lower = cl * (1.0 - uc)
    diag = 1.0 - cl * ul - cr * (1.0 - ur)
    upper = cr * uc
    return lower, diag, upper, ul * (1.0 - uc), -uc * (1.0 - ur)


def _lxf_entries(ul, uc, ur, cl, cr):
    fl, fc, fr = ul * (1.0 - ul), uc * (1.0 - uc), ur * (1.0 - ur)
    lower = 0.5 + 0.5 * cl * (1.0 - 2.0 * ul)
    diag = 0.5 * (cl - cr) * (1.0 - 2.0 * uc)
    upper = 0.5 - 0.5 * cr * (1.0 - 2.0 * ur)
    return lower, diag, upper, 0.5 * (fl + fc), -0.5 * (fc + fr)


def _entries(kind, *args):
    if kind is SchemeKind.TRM:
        return _trm_entries(*args)
    if kind is SchemeKind.LAX_FRIEDRICHS:
        return _lxf_entries(*args)
    raise UnsupportedScheme(f"no Jacobian for the {kind.value} scheme; use trm or lxf")


def _jacobians(kind, u, c, rows):
    """Bands for state ``u`` (length n) and interface coefficients ``c`` (n + 1).

    Only rows in ``rows`` (a slice inside 1..n-2) are non-zero.
    """
    n = u.size
    bands = _entries(kind, u[:-2], u[1:-1], u[2:], c[1:n - 1], c[2:n])
    out = []
    keep = np.zeros(n, dtype=bool)
    keep[rows] = True
    for band in bands:
        full = np.zeros(n)
        full[1:-1] = band
        full[~keep] = 0.0
        out.append(full)
    return StepJacobians(*out)


def step_jacobians(kind, state, control, rows=None):
    """Jacobians of one interior step; boundary rows (and rows outside ``rows``) are zero."""
    kind = SchemeKind.parse(kind)
    u = _checked_unit(state, "state")
    c = interface_coeffs(control, u.size)
    check_coefficients(c[1:-1])
    return _jacobians(kind, u, c, slice(1, u.size - 1) if rows is None else rows)


def regularizer(c_field):
    """Squared first differences along both axes of an ``(n_x + 1, n_t)`` field."""
    c = np.asarray(c_field, dtype=float)
    dt = np.diff(c, axis=1)
    dx = np.diff(c, axis=0)
    value = 0.5 * (np.sum(dt ** 2) + np.sum(dx ** 2))
    grad = np.zeros_like(c)
    grad[:, 1:] += dt
    grad[:, :-1] -= dt
    grad[1:, :] += dx
    grad[:-1, :] -= dx
    return value, grad


class Method(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True, eq=False)
class GradientRequest:
    """A cost to differentiate. The data are the plan's boundary source."""

    plan: RolloutPlan
    control: ControlField
    observed_cols: tuple = None
    lam: float = 0.0
    method: Method = Method.BACKWARD
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n_x = self.plan.data_grid.n_x
        cols = tuple(range(1, n_x - 1)) if self.observed_cols is None else tuple(
            int(c) for c in self.observed_cols)
        if any(c < 1 or c > n_x - 2 for c in cols):
            raise ValueError(f"observed columns must lie in 1..{n_x - 2}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        mask = np.zeros(n_x, dtype=bool)
        mask[list(cols)] = True
        object.__setattr__(self, "observed_cols", cols)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "method", Method(self.method))
        if self.control.mode is Mode.CONSTANT:
            object.__setattr__(self, "lam", 0.0)

    @property
    def theta(self):
        return logit_c_inverse(self.control.coeffs)

    def with_theta(self, theta):
        c, _ = logit_c(theta)
        return GradientRequest(self.plan, ControlField(self.control.mode, c),
                               self.observed_cols, self.lam, self.method)


def _coarse_residuals(req, states):
    """``(n_t, n_x)`` restricted residuals, zero on row 0 and unobserved columns."""
    spec = req.plan.spec
    coarse = states[:: spec.p_t].reshape(-1, req.plan.data_grid.n_x, spec.p_x).mean(axis=2)
    r = (coarse - req.plan.boundary_source.values) * req.mask
    r[0] = 0.0
    return r


def evaluate_cost(req: GradientRequest):
    """Scalar cost of the request's control."""
    g = req.plan.data_grid
    states = run_fine(req.plan, interpolate_control(req.plan, req.control))
    value = 0.5 * float(np.sum(_coarse_residuals(req, states) ** 2))
    if req.lam:
        value += req.lam * regularizer(req.control.field(g.n_x, g.n_t))[0]
    return value


def _chain(req, data_param_grad):
    """Add the regularizer and map a C-parameter gradient to theta."""
    g = req.plan.data_grid
    mode = req.control.mode
    total = np.asarray(data_param_grad, dtype=float)
    if req.lam:
        total = total + req.lam * mode.contract(regularizer(req.control.field(g.n_x, g.n_t))[1])
    _, dc = logit_c(req.theta)
    return total * dc


def _backward_field(req, fine_ctrl, states):
    """Data-term gradient with respect to the ``(n_x + 1, n_t)`` control field."""
    plan = req.plan
    p_t, p_x = plan.spec.p_t, plan.spec.p_x
    r = _coarse_residuals(req, states)
    rows = plan.interior
    n_steps = plan.n_steps
    g_fine = np.zeros_like(fine_ctrl)

    delta = np.repeat(r[-1], p_x) / p_x
    for m in range(n_steps - 1, -1, -1):
        jac = _jacobians(plan.kind, states[m], fine_ctrl[m], rows)
        g_fine[m] = jac.rmatvec_control(delta)
        if m == 0:
            break
        delta = jac.rmatvec_state(delta)
        if m % p_t == 0:
            delta += np.repeat(r[m // p_t], p_x) / p_x

    g = plan.data_grid
    wt = time_weights(g.n_t, p_t)
    wx = space_weights(g.n_x, p_x)
    return (wt.T @ g_fine @ wx).T


def grad_backward(req: GradientRequest):
    fine_ctrl = interpolate_control(req.plan, req.control)
    states = run_fine(req.plan, fine_ctrl)
    field_grad = _backward_field(req, fine_ctrl, states)
    return _chain(req, req.control.mode.contract(field_grad))


def _expansion_matrix(mode, n_x, n_t):
    """Dense Jacobian of the flattened field with respect to the flattened parameters."""
    n_par = int(np.prod(mode.param_shape(n_x, n_t), dtype=int))
    eye = np.eye(n_par)
    shape = mode.param_shape(n_x, n_t)
    cols = [mode.broadcast(eye[k].reshape(shape), n_x, n_t).ravel() for k in range(n_par)]
    return np.stack(cols, axis=1)


def grad_forward(req: GradientRequest):
    plan = req.plan
    g = plan.data_grid
    p_t, p_x = plan.spec.p_t, plan.spec.p_x
    fine_ctrl = interpolate_control(plan, req.control)
    states = run_fine(plan, fine_ctrl)
    r = _coarse_residuals(req, states)

    E = _expansion_matrix(req.control.mode, g.n_x, g.n_t)
    wt = time_weights(g.n_t, p_t)
    wx = space_weights(g.n_x, p_x)
    # masked averaging: coarse cell j <- mean of its p_x subcells, observed cells only
    avg = np.kron(np.diag(req.mask.astype(float)), np.full((1, p_x), 1.0 / p_x))

    sens = np.zeros((plan.n_fine, E.shape[1]))
    grad = np.zeros(E.shape[1])
    for m in range(plan.n_steps):
        jac = _jacobians(plan.kind, states[m], fine_ctrl[m], plan.interior)
        dfine_dparam = np.kron(wx, wt[m][None, :]) @ E
        sens = jac.state_matrix() @ sens + jac.control_matrix() @ dfine_dparam
        if (m + 1) % p_t == 0:
            grad += sens.T @ (avg.T @ r[(m + 1) // p_t])
    shape = req.control.mode.param_shape(g.n_x, g.n_t)
    return _chain(req, grad.reshape(shape))


def gradient(req: GradientRequest):
    if req.method is Method.FORWARD:
        return grad_forward(req)
    return grad_backward(req)


def objective(req: GradientRequest):
    """``(cost, gradient)`` from one rollout and one backward sweep."""
    g = req.plan.data_grid
    fine_ctrl = interpolate_control(req.plan, req.control)
    states = run_fine(req.plan, fine_ctrl)
    value = 0.5 * float(np.sum(_coarse_residuals(req, states) ** 2))
    if req.lam:
        value += req.lam * regularizer(req.control.field(g.n_x, g.n_t))[0]
    field_grad = _backward_field(req, fine_ctrl, states)
    return value, _chain(req, req.control.mode.contract(field_grad))


# ------------------------------------------------------------ finite differences


def fd_gradient(f, x, h=1e-6):
    """Central differences of scalar ``f`` at array ``x`` (any shape)."""
    x = np.array(x, dtype=float)
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for k in range(flat.size):
        keep = flat[k]
        flat[k] = keep + h
        up = f(x)
        flat[k] = keep - h
        down = f(x)
        flat[k] = keep
        gflat[k] = (up - down) / (2.0 * h)
    return out


def relative_error(g, ref, floor=1e-12):
    g, ref = np.asarray(g, dtype=float), np.asarray(ref, dtype=float)
    scale = max(np.max(np.abs(ref), initial=0.0), np.max(np.abs(g), initial=0.0), floor)
    return float(np.max(np.abs(g - ref), initial=0.0) / scale)


def check_request(req: GradientRequest, h=1e-6):
    """FP, BP and FD comparison for one request."""
    theta = req.theta
    fp = grad_forward(req)
    bp = grad_backward(req)
    fd = fd_gradient(lambda th: evaluate_cost(req.with_theta(th)), theta, h)
    scale = max(np.max(np.abs(fp), initial=0.0), np.max(np.abs(bp), initial=0.0))
    return {
        "fp_vs_bp": float(np.max(np.abs(fp - bp), initial=0.0) / (1.0 + scale)),
        "fp_vs_fd": relative_error(fp, fd),
        "bp_vs_fd": relative_error(bp, fd),
    }


# ------------------------------------------------------------ random lattice


OBSERVATION_PATTERNS = ("full", "half", "single")


def observation_pattern(name, n_x):
    interior = list(range(1, n_x - 1))
    if name == "full":
        return interior
    if name == "half":
        return interior[: max(1, len(interior) // 2)]
    if name == "single":
        return [n_x // 2]
    if name == "none":
        return []
    raise ValueError(f"unknown observation pattern {name!r}")


def random_request(rng, kind, mode, spec, pattern="full", lam=None, method=Method.BACKWARD):
    """A small random instance whose rollout stays strictly inside (0, 1)."""
    from .grid import DensityMatrix, Grid

    kind, mode = SchemeKind.parse(kind), Mode.parse(mode)
    for _ in range(100):
        n_t, n_x = int(rng.integers(3, 5)), int(rng.integers(4, 7))
        grid = Grid(n_t, n_x, 1.0, 1.0)
        data = DensityMatrix(grid, rng.uniform(0.15, 0.85, size=(n_t, n_x)))
        plan = RolloutPlan(grid, spec, kind, data)
        coeffs = rng.uniform(0.1, 0.4, size=mode.param_shape(n_x, n_t))
        control = ControlField(mode, coeffs)
        weight = float(rng.choice([0.0, 0.3])) if lam is None else lam
        req = GradientRequest(plan, control, observation_pattern(pattern, n_x), weight, method)
        states = run_fine(plan, interpolate_control(plan, control))
        if states.min() > 1e-9 and states.max() < 1 - 1e-9:
            return req
    raise RuntimeError("could not draw an in-range instance")


def gradcheck_report(kinds=("trm", "lxf"), modes=tuple(m.value for m in Mode),
                     subdivisions=((1, 1), (2, 3)), patterns=OBSERVATION_PATTERNS,
                     repeats=1, seed=0, h=1e-6, threshold=1e-5):
    """Run FP/BP/FD comparisons over a lattice and summarize per mode."""
    from .grid import SubdivisionSpec

    rng = np.random.default_rng(seed)
    cases = []
    for kind in kinds:
        for mode in modes:
            for p_t, p_x in subdivisions:
                for pattern in patterns:
                    for _ in range(repeats):
                        req = random_request(rng, kind, mode, SubdivisionSpec(p_t, p_x), pattern)
                        errs = check_request(req, h)
                        cases.append({"kind": SchemeKind.parse(kind).value,
                                      "mode": Mode.parse(mode).value,
                                      "p_t": p_t, "p_x": p_x, "observed": pattern,
                                      "lam": req.lam, **errs})
    per_mode = {}
    for case in cases:
        agg = per_mode.setdefault(case["mode"], {"fp_vs_fd": 0.0, "bp_vs_fd": 0.0, "fp_vs_bp": 0.0})
        for key in agg:
            agg[key] = max(agg[key], case[key])
    worst = max((max(c["fp_vs_fd"], c["bp_vs_fd"]) for c in cases), default=0.0)
    worst_fp_bp = max((c["fp_vs_bp"] for c in cases), default=0.0)
    passed = worst <= threshold and worst_fp_bp <= 1e-12
    return {"passed": bool(passed), "threshold": threshold, "h": h, "n_cases": len(cases),
            "per_mode": per_mode, "cases": cases}

"""Cost assembly, conjugate-gradient minimization and result packaging."""
from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CflViolation, ConfigError, NoDescentProgress, ShapeMismatch
from .gradients import GradientRequest, Method, objective, regularizer
from .grid import DensityMatrix, Grid, SubdivisionSpec, restrict
from .reparam import logit_c, logit_c_inverse
from .rollout import RolloutPlan, check_observed, residuals, rmse, run
from .schemes import ControlField, Mode, SchemeKind

log = logging.getLogger(__name__)

__all__ = [
    "OptimizerSettings", "EstimationProblem", "EstimationResult", "logit_c",
    "logit_c_inverse", "cost", "minimize", "fundamental_diagram", "default_lambda_grid",
]


@dataclass(frozen=True)
class OptimizerSettings:
    max_iters: int = 500
    grad_tol: float = 1e-8
    initial_theta: object = None
    line_search: bool = True  # False applies the bare step theta += d
    warm_start: bool = True
    armijo_c: float = 1e-4
    max_halvings: int = 50
    method: str = "backward"

    def __post_init__(self):
        if self.max_iters < 0 or self.grad_tol < 0:
            raise ConfigError("max_iters and grad_tol must be non-negative")


@dataclass(frozen=True, eq=False)
class EstimationProblem:
    data: DensityMatrix
    rho_max: float = 1.0
    kind: SchemeKind = SchemeKind.TRM
    mode: Mode = Mode.CONSTANT
    spec: SubdivisionSpec = SubdivisionSpec()
    observed_cols: tuple = None
    lam: object = None  # float, sequence of candidates, or None for the default grid
    optimizer: OptimizerSettings = OptimizerSettings()

    def __post_init__(self):
        kind = SchemeKind.parse(self.kind)
        if not kind.differentiable:
            from .errors import UnsupportedScheme
            raise UnsupportedScheme(f"cannot estimate with the {kind.value} scheme")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        n_x = self.data.grid.n_x
        cols = range(1, n_x - 1) if self.observed_cols is None else self.observed_cols
        object.__setattr__(self, "observed_cols", tuple(int(c) for c in check_observed(cols, n_x)))
        if not self.rho_max > 0:
            raise ConfigError("rho_max must be positive")

    @property
    def grid(self) -> Grid:
        return self.data.grid

    @property
    def plan(self):
        return RolloutPlan(self.grid, self.spec, self.kind, self.data)

    @property
    def param_shape(self):
        return self.mode.param_shape(self.grid.n_x, self.grid.n_t)

    @property
    def n_params(self):
        return int(np.prod(self.param_shape, dtype=int))

    @property
    def speed_scale(self):
        """Fine-grid dx/dt: multiplies C to give v_m in data units."""
        return (self.grid.dx / self.spec.p_x) / (self.grid.dt / self.spec.p_t)

    def lambda_candidates(self):
        if self.mode is Mode.CONSTANT:
            return [0.0]
        if self.lam is None:
            return default_lambda_grid(self)
        if np.ndim(self.lam) == 0:
            return [float(self.lam)]
        lams = [float(v) for v in self.lam]
        if not lams or min(lams) < 0:
            raise ConfigError("lambda candidates must be a non-empty set of non-negative values")
        return lams

    def control(self, theta):
        c, _ = logit_c(np.asarray(theta, dtype=float).reshape(self.param_shape))
        return ControlField(self.mode, c)

    def request(self, theta, lam):
        return GradientRequest(self.plan, self.control(theta), self.observed_cols, lam,
                               Method(self.optimizer.method))


def default_lambda_grid(problem):
    data_size = (problem.grid.n_t - 1) * len(problem.observed_cols)
    scale = data_size / problem.n_params
    return [10.0 ** k * scale for k in range(-4, 2)]


def cost(problem: EstimationProblem, theta, lam=None):
    """Least-squares misfit of the restricted rollout plus the weighted regularizer."""
    if lam is None:
        lam = 0.0 if problem.lam is None or np.ndim(problem.lam) else float(problem.lam)
    control = problem.control(theta)
    fine = run(problem.plan, control)
    r = residuals(fine, problem.data, problem.spec, problem.observed_cols)
    value = 0.5 * float(np.sum(r ** 2))
    if problem.mode is not Mode.CONSTANT and lam:
        g = problem.grid
        value += lam * regularizer(control.field(g.n_x, g.n_t))[0]
    return value


# ------------------------------------------------------------------ optimizer


# Expanded or extrapolated trial steps move theta by at most this much (max norm).
# Larger moves reach logit saturation, where the flat gradient fakes convergence.
MAX_THETA_MOVE = 2.0


@dataclass
class _Trace:
    theta: np.ndarray
    cost: float
    costs: list
    iterations: int = 0
    converged: bool = False
    no_progress: bool = False


def _safe_cost(problem, theta, lam):
    try:
        return cost(problem, theta, lam)
    except CflViolation:
        # logit saturated to exactly 0 or 1/2 in floating point
        return math.inf


def _conjugate_gradient(problem, theta0, lam):
    opt = problem.optimizer
    x = np.array(theta0, dtype=float).reshape(problem.param_shape)
    f, g = objective(problem.request(x, lam))
    trace = _Trace(x.copy(), f, [f])
    d = -g
    alpha0, prev = 1.0, None  # prev: (accepted step, slope) of the last line search
    for it in range(opt.max_iters):
        if np.max(np.abs(g), initial=0.0) <= opt.grad_tol * (1.0 + abs(f)):
            trace.converged = True
            break
        slope = float(np.sum(g * d))
        if slope >= 0:
            d, slope = -g, -float(np.sum(g * g))

        if opt.line_search:
            if prev is not None:
                # first trial reuses the last step's predicted decrease
                alpha0 = max(1.0, min(prev[0] * prev[1] / slope, _move_limit(d)))
            step = _armijo(problem, x, f, d, slope, lam, alpha0)
            if step is None and np.any(d != -g):
                d, slope = -g, -float(np.sum(g * g))
                step = _armijo(problem, x, f, d, slope, lam, 1.0)
            if step is None:
                trace.no_progress = True
                warnings.warn(
                    f"line search made no progress after {opt.max_halvings} halvings "
                    f"(iteration {it}, cost {f:.6g})", NoDescentProgress)
                break
            x_new = x + step * d
            prev = (step, slope)
        else:
            x_new = x + d

        try:
            f_new, g_new = objective(problem.request(x_new, lam))
        except CflViolation:
            trace.no_progress = True
            warnings.warn("bare step left the admissible region", NoDescentProgress)
            break
        beta = max(0.0, float(np.sum(g_new * (g_new - g)) / max(np.sum(g * g), 1e-300)))
        d = -g_new + beta * d
        x, f, g = x_new, f_new, g_new
        trace.costs.append(f)
        trace.iterations = it + 1
        if f < trace.cost:
            trace.theta, trace.cost = x.copy(), f
    log.debug("lam=%g: %d iterations, cost %.6g", lam, trace.iterations, trace.cost)
    return trace


def _move_limit(d):
    """Largest step length keeping the theta move within MAX_THETA_MOVE."""
    norm = float(np.max(np.abs(d), initial=0.0))
    return MAX_THETA_MOVE / norm if norm > 0 else 1.0


def _armijo(problem, x, f, d, slope, lam, alpha=1.0):
    """Backtracking by halving; a first trial that passes is doubled while it keeps paying off."""
    opt = problem.optimizer

    def accepts(a, value):
        return value <= f + opt.armijo_c * a * slope

    trial = _safe_cost(problem, x + alpha * d, lam)
    if accepts(alpha, trial):
        while 2.0 * alpha <= _move_limit(d):
            bigger = _safe_cost(problem, x + 2.0 * alpha * d, lam)
            if not (accepts(2.0 * alpha, bigger) and bigger < trial):
                break
            alpha, trial = 2.0 * alpha, bigger
        return alpha
    for _ in range(opt.max_halvings):
        alpha *= 0.5
        if accepts(alpha, _safe_cost(problem, x + alpha * d, lam)):
            return alpha
    return None


# --------------------------------------------------------------------- results


@dataclass(frozen=True, eq=False)
class EstimationResult:
    kind: SchemeKind
    mode: Mode
    spec: SubdivisionSpec
    grid: Grid
    rho_max: float
    theta_star: np.ndarray
    c_star: ControlField
    v_m_star: np.ndarray
    fitted_density: DensityMatrix
    rmse_observed: float
    rmse_full: float
    cost: float
    cost_trace: list
    iterations: int
    converged: bool
    no_progress: bool
    lam: float
    observed_cols: tuple
    lambda_scores: dict = field(default_factory=dict)

    @property
    def v_field(self):
        """Speed on the ``(n_x + 1, n_t)`` interface-by-time field."""
        return self.mode.broadcast(self.v_m_star, self.grid.n_x, self.grid.n_t)

    def summary(self):
        v = np.asarray(self.v_m_star)
        if v.ndim == 0:
            speed = f"v_m*={float(v):.6g}"
        else:
            speed = f"v_m* mean={v.mean():.6g} min={v.min():.6g} max={v.max():.6g}"
        return (f"mode={self.mode.value} scheme={self.kind.value} {speed} "
                f"rmse_observed={self.rmse_observed:.4g} rmse_full={self.rmse_full:.4g} "
                f"iterations={self.iterations}")

    def to_json(self):
        return {
            "kind": self.kind.value,
            "mode": self.mode.value,
            "subdivision": {"p_t": self.spec.p_t, "p_x": self.spec.p_x},
            "grid": self.grid.to_dict(),
            "rho_max": self.rho_max,
            "theta_star": np.asarray(self.theta_star).tolist(),
            "c_star": np.asarray(self.c_star.coeffs).tolist(),
            "v_m_star": np.asarray(self.v_m_star).tolist(),
            "rmse_observed": self.rmse_observed,
            "rmse_full": self.rmse_full,
            "cost": self.cost,
            "cost_trace": list(self.cost_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "no_progress": self.no_progress,
            "lambda": self.lam,
            "lambda_scores": {repr(k): v for k, v in self.lambda_scores.items()},
            "observed_cols": list(self.observed_cols),
        }

    def dumps(self, **extra):
        doc = self.to_json()
        doc.update(extra)
        return json.dumps(doc, indent=2)


def _package(problem, trace, lam, scores):
    theta = trace.theta
    control = problem.control(theta)
    fine = run(problem.plan, control)
    fitted = DensityMatrix(problem.grid, restrict(fine, problem.spec))
    interior = range(1, problem.grid.n_x - 1)
    return EstimationResult(
        kind=problem.kind,
        mode=problem.mode,
        spec=problem.spec,
        grid=problem.grid,
        rho_max=problem.rho_max,
        theta_star=np.asarray(theta),
        c_star=control,
        v_m_star=np.asarray(control.coeffs) * problem.speed_scale,
        fitted_density=fitted,
        rmse_observed=rmse(fine, problem.data, problem.spec, problem.observed_cols),
        rmse_full=rmse(fine, problem.data, problem.spec, interior),
        cost=trace.cost,
        cost_trace=trace.costs,
        iterations=trace.iterations,
        converged=trace.converged,
        no_progress=trace.no_progress,
        lam=lam,
        observed_cols=problem.observed_cols,
        lambda_scores=scores,
    )


def _coarser(mode):
    return {Mode.TIME: Mode.CONSTANT, Mode.SPACE: Mode.CONSTANT, Mode.SPACETIME: Mode.TIME}.get(mode)


def _initial_theta(problem):
    opt = problem.optimizer
    if opt.initial_theta is not None:
        theta = np.asarray(opt.initial_theta, dtype=float)
        if theta.size == 1:
            return np.full(problem.param_shape, float(theta.reshape(())))
        if theta.shape != problem.param_shape:
            raise ShapeMismatch(f"initial_theta shape {theta.shape} != {problem.param_shape}")
        return theta
    coarser = _coarser(problem.mode)
    if coarser is None or not opt.warm_start:
        return np.zeros(problem.param_shape)
    # fit the coarser parametrization at lambda=0 and broadcast its optimum
    sub = replace(problem, mode=coarser, lam=0.0)
    fit = minimize(sub)
    g = problem.grid
    c_field = fit.c_star.field(g.n_x, g.n_t)
    if problem.mode is Mode.TIME:
        c = c_field[0]
    elif problem.mode is Mode.SPACE:
        c = c_field[:, 0]
    else:
        c = c_field
    return logit_c_inverse(c)


def minimize(problem: EstimationProblem, workers=1) -> EstimationResult:
    """Fit the control parameters; with several lambda candidates keep the lowest rmse_full.

    ``workers > 1`` fits the lambda candidates concurrently in threads.
    """
    theta0 = _initial_theta(problem)
    lams = problem.lambda_candidates()

    def fit(lam):
        return _package(problem, _conjugate_gradient(problem, theta0, lam), lam, {})

    if workers > 1 and len(lams) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fit, lams))
    else:
        results = [fit(lam) for lam in lams]
    best = min(results, key=lambda r: r.rmse_full)
    return replace(best, lambda_scores={r.lam: r.rmse_full for r in results})


def fundamental_diagram(result: EstimationResult, data_density=None, data_flow=None):
    """Density/flow points of the fit (and of the data if supplied).

    Densities are in vehicles per unit length and flows in vehicles per unit
    time. The fit speed of cell ``j`` at time ``n`` is the mean of its two
    interface speeds.
    """
    rho = result.fitted_density.values * result.rho_max
    v = result.v_field
    v_bar = 0.5 * (v[:-1, :] + v[1:, :]).T  # (n_t, n_x)
    phi = rho * v_bar * (1.0 - rho / result.rho_max)
    out = {
        "fit": np.column_stack([rho.ravel(), phi.ravel()]),
        "fit_speed": v_bar.ravel(),
        "data": None,
    }
    if data_density is not None and data_flow is not None:
        d = np.asarray(data_density, dtype=float).ravel()
        q = np.asarray(data_flow, dtype=float).ravel()
        if d.shape != q.shape:
            raise ShapeMismatch("data density and flow differ in shape")
        out["data"] = np.column_stack([d, q])
    return out

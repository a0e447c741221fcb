import json
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize as scipy_minimize

from trmfit.errors import (
    EmptyObservationSet,
    InverseOutOfRange,
    NoDescentProgress,
    ShapeMismatch,
    UnsupportedScheme,
)
from trmfit.estimation import (
    EstimationProblem,
    OptimizerSettings,
    cost,
    default_lambda_grid,
    fundamental_diagram,
    minimize,
)
from trmfit.grid import DensityMatrix, Grid, SubdivisionSpec, restrict
from trmfit.reparam import logit_c, logit_c_inverse
from trmfit.rollout import RolloutPlan, run
from trmfit.schemes import ControlField, Mode
from trmfit.synthetic import two_regime


def test_logit_examples():
    c, dc = logit_c(0.0)
    assert c == 0.25 and dc == 0.125
    assert logit_c(40.0)[0] == pytest.approx(0.5)
    assert logit_c(-40.0)[0] == pytest.approx(0.0, abs=1e-15)
    assert logit_c_inverse(logit_c(1.7)[0]) == pytest.approx(1.7, abs=1e-12)
    for bad in (0.0, 0.5, -0.1, 0.7):
        with pytest.raises(InverseOutOfRange):
            logit_c_inverse(bad)


def self_generated(c_true=0.3, spec=SubdivisionSpec(1, 1), n_t=8, n_x=7, seed=0):
    rng = np.random.default_rng(seed)
    grid = Grid(n_t, n_x, 0.05, 0.1)
    seed_data = DensityMatrix(grid, rng.uniform(0.2, 0.8, grid.shape))
    fine = run(RolloutPlan(grid, spec, "trm", seed_data), ControlField.constant(c_true))
    return DensityMatrix(grid, restrict(fine, spec))


def test_cost_zero_at_generating_parameter():
    data = self_generated()
    problem = EstimationProblem(data)
    assert cost(problem, logit_c_inverse(0.3)) <= 1e-30


def test_cost_single_step():
    vals = np.array([[0.2, 0.5, 0.7], [0.2, 0.9, 0.7]])
    problem = EstimationProblem(DensityMatrix(Grid(2, 3, 1.0, 1.0), vals), observed_cols=[1])
    c = 0.25
    pred = 0.5 + c * 0.2 * 0.5 - c * 0.5 * 0.3
    assert cost(problem, 0.0) == pytest.approx(0.5 * (pred - 0.9) ** 2, abs=1e-15)


def loop_cost(data, c_field, lam, cols):
    n_t, n_x = data.shape
    u = list(data[0])
    total = 0.0
    for n in range(n_t - 1):
        c = c_field[:, n]
        nxt = [data[n + 1][0]] + [0.0] * (n_x - 2) + [data[n + 1][n_x - 1]]
        for j in range(1, n_x - 1):
            nxt[j] = u[j] + c[j] * u[j - 1] * (1 - u[j]) - c[j + 1] * u[j] * (1 - u[j + 1])
        u = nxt
        for j in cols:
            total += 0.5 * (u[j] - data[n + 1][j]) ** 2
    reg = 0.0
    for j in range(n_x + 1):
        for n in range(n_t):
            if n + 1 < n_t:
                reg += 0.5 * (c_field[j, n + 1] - c_field[j, n]) ** 2
            if j + 1 <= n_x:
                reg += 0.5 * (c_field[j + 1, n] - c_field[j, n]) ** 2
    return total + lam * reg


def test_cost_matches_loop_oracle(rng):
    grid = Grid(5, 6, 1.0, 1.0)
    data = DensityMatrix(grid, rng.uniform(0.1, 0.9, grid.shape))
    cols = [1, 3, 4]
    problem = EstimationProblem(data, mode="spacetime", observed_cols=cols, lam=0.7)
    theta = rng.normal(size=problem.param_shape)
    c_field = logit_c(theta)[0]
    want = loop_cost(data.values, c_field, 0.7, cols)
    assert abs(cost(problem, theta) - want) <= 1e-14


def test_quadratic_basin_converges():
    theta0 = logit_c_inverse(0.3)
    data = self_generated(0.3, SubdivisionSpec(2, 2))
    settings = OptimizerSettings(initial_theta=theta0 + 0.5)
    res = minimize(EstimationProblem(data, spec=SubdivisionSpec(2, 2), optimizer=settings))
    assert res.cost <= 1e-10
    assert float(res.c_star.coeffs) == pytest.approx(0.3, abs=1e-5)


def test_cost_trace_is_monotone_and_best_is_returned(rng):
    grid = Grid(6, 6, 1.0, 1.0)
    data = DensityMatrix(grid, rng.uniform(0.2, 0.8, grid.shape))
    res = minimize(EstimationProblem(data, mode="time", lam=0.0,
                                     optimizer=OptimizerSettings(max_iters=60)))
    trace = np.array(res.cost_trace)
    assert np.all(np.diff(trace) <= 0)
    assert res.cost == pytest.approx(trace.min())
    assert np.all((res.c_star.coeffs > 0) & (res.c_star.coeffs < 0.5))


def test_huge_lambda_flattens_the_field():
    data, _ = two_regime(n_t=9, n_x=7)
    res = minimize(EstimationProblem(data, mode="spacetime", lam=1e6))
    c = np.asarray(res.c_star.coeffs)
    assert c.max() - c.min() <= 1e-3


def test_reparametrization_matches_bounded_reference(rng):
    # noisy data around an interior control, so the optimum is not on the box edge
    grid = Grid(6, 6, 1.0, 1.0)
    seed = DensityMatrix(grid, rng.uniform(0.2, 0.8, grid.shape))
    truth = ControlField("time", rng.uniform(0.15, 0.35, 6))
    clean = restrict(run(RolloutPlan(grid, SubdivisionSpec(), "trm", seed), truth), SubdivisionSpec())
    data = DensityMatrix(grid, np.clip(clean + rng.normal(0, 0.01, clean.shape), 0, 1))
    problem = EstimationProblem(data, mode="time", lam=0.0)
    ours = minimize(problem).cost

    def in_c(c):
        return cost(problem, logit_c_inverse(c))

    ref = scipy_minimize(in_c, np.full(problem.param_shape, 0.25), method="L-BFGS-B",
                         bounds=[(0.001, 0.499)] * problem.n_params,
                         options={"ftol": 1e-15, "gtol": 1e-12})
    assert abs(ours - ref.fun) <= 1e-6


def test_mode_nesting():
    data, _ = two_regime(n_t=9, n_x=7)
    costs = {m: minimize(EstimationProblem(data, mode=m, lam=0.0)).cost
             for m in ("constant", "time", "spacetime")}
    assert costs["spacetime"] <= costs["time"] <= costs["constant"]


def test_speed_scales_with_dx():
    data = self_generated(0.2)
    wide = DensityMatrix(Grid(data.grid.n_t, data.grid.n_x, data.grid.dt, 2 * data.grid.dx),
                         data.values)
    a = minimize(EstimationProblem(data, optimizer=OptimizerSettings(max_iters=20)))
    b = minimize(EstimationProblem(wide, optimizer=OptimizerSettings(max_iters=20)))
    assert np.array_equal(a.c_star.coeffs, b.c_star.coeffs)
    assert float(b.v_m_star) == 2 * float(a.v_m_star)
    assert float(a.v_m_star) == pytest.approx(float(a.c_star.coeffs) * 2.0)


def test_fundamental_diagram_points():
    data = self_generated(0.2)
    res = minimize(EstimationProblem(data, rho_max=0.5))
    fd = fundamental_diagram(res)
    rho, phi = fd["fit"].T
    v = float(res.v_m_star)
    assert np.allclose(phi, rho * v * (1 - rho / 0.5), atol=1e-15)
    assert fd["data"] is None
    # the two landmarks of the parabola
    f = lambda r: r * v * (1 - r / 0.5)  # noqa: E731
    assert f(0.0) == 0.0 and f(0.25) == pytest.approx(v * 0.5 / 4)
    with_data = fundamental_diagram(res, data.values, data.values * 0.3)
    assert with_data["data"].shape == (data.values.size, 2)
    with pytest.raises(ShapeMismatch):
        fundamental_diagram(res, data.values, data.values[:2])


def test_result_serializes():
    res = minimize(EstimationProblem(self_generated(0.2), optimizer=OptimizerSettings(max_iters=5)))
    doc = json.loads(res.dumps(extra_field=1))
    for key in ("theta_star", "c_star", "v_m_star", "rmse_observed", "rmse_full", "cost_trace",
                "iterations", "grid", "extra_field"):
        assert key in doc
    assert "mode=constant" in res.summary()


def test_problem_validation():
    data = self_generated()
    with pytest.raises(UnsupportedScheme):
        EstimationProblem(data, kind="godunov")
    with pytest.raises(EmptyObservationSet):
        EstimationProblem(data, observed_cols=[])
    with pytest.raises(ShapeMismatch):
        EstimationProblem(data, observed_cols=[0])
    with pytest.raises(ShapeMismatch):
        minimize(EstimationProblem(data, mode="time", optimizer=OptimizerSettings(
            initial_theta=[0.0, 1.0])))


def test_default_lambda_grid():
    data = self_generated(n_t=8, n_x=7)
    problem = EstimationProblem(data, mode="time")
    grid = default_lambda_grid(problem)
    scale = 7 * 5 / 8
    assert np.allclose(grid, [10.0 ** k * scale for k in range(-4, 2)])
    assert EstimationProblem(data).lambda_candidates() == [0.0]


def test_line_search_failure_flags_no_progress(rng, monkeypatch):
    from trmfit import estimation

    grid = Grid(5, 5, 1.0, 1.0)
    data = DensityMatrix(grid, rng.uniform(0.2, 0.8, grid.shape))
    calls = []

    def never_better(problem, theta, lam):
        calls.append(1)
        return np.inf

    monkeypatch.setattr(estimation, "_safe_cost", never_better)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = minimize(EstimationProblem(data))
    assert res.no_progress and res.iterations == 0 and not res.converged
    assert len(calls) == 51  # first trial plus 50 halvings
    assert any(issubclass(w.category, NoDescentProgress) for w in caught)


def test_bare_step_and_threads_agree_with_reference(rng):
    data = self_generated(0.3)
    bare = minimize(EstimationProblem(data, optimizer=OptimizerSettings(
        line_search=False, max_iters=3)))
    assert bare.iterations <= 3
    grid_data, _ = two_regime(n_t=7, n_x=6)
    problem = EstimationProblem(grid_data, mode="time", lam=[0.0, 0.1],
                                optimizer=OptimizerSettings(max_iters=30))
    serial, threaded = minimize(problem), minimize(problem, workers=2)
    assert serial.lam == threaded.lam
    assert np.array_equal(serial.theta_star, threaded.theta_star)
    assert set(serial.lambda_scores) == {0.0, 0.1}

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trmfit.errors import CflViolation, DomainError, ShapeMismatch
from trmfit.grid import Grid, restrict, SubdivisionSpec
from trmfit.schemes import (
    ControlField,
    Mode,
    SchemeKind,
    crop,
    flux,
    numerical_flux,
    reference_solve,
    step_interior,
)
from trmfit.synthetic import bump_profile, cell_averages

KINDS = list(SchemeKind)


def dense_godunov(u, v, n=10_000):
    w = np.linspace(min(u, v), max(u, v), n)
    f = w * (1 - w)
    return f.min() if u <= v else f.max()


@pytest.mark.parametrize("u,v_m,want", [(0, 1, 0), (1, 7, 0), (0.5, 1, 0.25)])
def test_flux_examples(u, v_m, want):
    assert flux(u, v_m) == pytest.approx(want)


def test_numerical_flux_examples():
    for kind in KINDS:
        assert numerical_flux(kind, 0.3, 0.3) == pytest.approx(0.21, abs=1e-15)
    assert numerical_flux("godunov", 0.8, 0.2) == pytest.approx(0.25)
    assert numerical_flux("godunov", 0.2, 0.8) == pytest.approx(0.16)
    assert numerical_flux("trm", 0.2, 0.8) == pytest.approx(0.04)
    assert numerical_flux("lxf", 0.2, 0.8) == pytest.approx(0.16)


def test_godunov_examples_match_dense_sampling():
    assert abs(numerical_flux("godunov", 0.8, 0.2) - dense_godunov(0.8, 0.2)) < 1e-8
    assert abs(numerical_flux("godunov", 0.2, 0.8) - dense_godunov(0.2, 0.8)) < 1e-8


@pytest.mark.parametrize("kind", KINDS)
def test_consistency_on_tenth_grid(kind):
    for u in np.linspace(0, 1, 11):
        assert abs(numerical_flux(kind, u, u) - u * (1 - u)) <= 1e-15


@given(st.floats(0, 1), st.floats(0, 1))
def test_godunov_closed_form_property(u, v):
    assert abs(numerical_flux("godunov", u, v) - dense_godunov(u, v)) < 1e-8


def test_numerical_flux_domain():
    assert numerical_flux("trm", 1 + 1e-13, -1e-13) == 1.0
    assert numerical_flux("godunov", -1e-13, -1e-13) == 0.0
    with pytest.raises(DomainError):
        numerical_flux("trm", 1.01, 0.5)
    with pytest.raises(DomainError):
        numerical_flux("lxf", 0.5, -0.001)


def test_scheme_kind_parse():
    assert SchemeKind.parse("LaxFriedrichs") is SchemeKind.LAX_FRIEDRICHS
    assert SchemeKind.parse("TRM") is SchemeKind.TRM
    with pytest.raises(ValueError):
        SchemeKind.parse("upwind")
    assert not SchemeKind.GODUNOV.differentiable


def test_step_examples():
    assert step_interior("trm", [0.4, 0.4, 0.4], 0.37)[0] == pytest.approx(0.4)
    assert step_interior("trm", [1.0, 0.0, 0.0], 0.25)[0] == pytest.approx(0.25)
    assert step_interior("lxf", [0.2, 0.5, 0.8], 0.25)[0] == pytest.approx(0.5)


def test_step_trm_hand_evaluated_varying():
    u = np.array([0.2, 0.6, 0.3, 0.9])
    c = np.array([0.05, 0.1, 0.2, 0.3, 0.45])
    got = step_interior("trm", u, c)
    want = [
        0.6 + 0.1 * 0.2 * 0.4 - 0.2 * 0.6 * 0.7,
        0.3 + 0.2 * 0.6 * 0.7 - 0.3 * 0.3 * 0.1,
    ]
    assert np.allclose(got, want, atol=1e-15)


def test_step_validation():
    with pytest.raises(CflViolation):
        step_interior("trm", [0.1, 0.2, 0.3], 0.5)
    with pytest.raises(CflViolation):
        step_interior("trm", [0.1, 0.2, 0.3], [0.1, 0.0, 0.2, 0.1])
    # the outer interfaces never enter the update
    step_interior("trm", [0.1, 0.2, 0.3], [0.9, 0.2, 0.2, -1.0])
    with pytest.raises(ShapeMismatch):
        step_interior("trm", [0.1, 0.2], 0.2)
    with pytest.raises(DomainError):
        step_interior("trm", [0.1, 1.2, 0.3], 0.2)


def _pair(seed, n=8):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, n)
    b = np.minimum(1.0, a + rng.uniform(0, 0.5, n) * (rng.uniform(size=n) < 0.7))
    b[0], b[-1] = a[0], a[-1]
    c = rng.uniform(1e-3, 0.499, n + 1)
    return a, b, c


@pytest.mark.parametrize("kind", ["trm", "godunov"])
@given(seed=st.integers(0, 2**32 - 1))
def test_monotone_under_cfl(kind, seed):
    a, b, c = _pair(seed)
    if kind == "godunov":
        c[:] = c[1]  # varying coefficients are a TRM feature
    sa, sb = step_interior(kind, a, c), step_interior(kind, b, c)
    assert np.all(sa <= sb + 1e-15)


@given(seed=st.integers(0, 2**32 - 1))
def test_trm_linf_stable_constant_coefficient(seed):
    rng = np.random.default_rng(seed)
    lo, hi = np.sort(rng.uniform(0, 1, 2))
    u = rng.uniform(lo, hi, 9)
    out = step_interior("trm", u, rng.uniform(1e-3, 0.499))
    assert out.min() >= lo - 1e-15 and out.max() <= hi + 1e-15


@given(seed=st.integers(0, 2**32 - 1))
def test_trm_unit_interval_invariant_varying_coefficient(seed):
    rng = np.random.default_rng(seed)
    u = rng.uniform(0, 1, 9)
    u[rng.uniform(size=9) < 0.2] = 1.0
    u[rng.uniform(size=9) < 0.2] = 0.0
    out = step_interior("trm", u, rng.uniform(1e-3, 0.499, 10))
    assert out.min() >= -1e-15 and out.max() <= 1 + 1e-15


def test_varying_coefficient_moves_constant_state():
    out = step_interior("trm", [0.5, 0.5, 0.5], [0.1, 0.3, 0.1, 0.1])
    assert out[0] == pytest.approx(0.5 + 0.2 * 0.25)


def test_control_field_modes():
    n_x, n_t = 3, 2
    cf = ControlField(Mode.SPACETIME, np.arange(1, 9).reshape(4, 2) / 20)
    assert cf.expand(1, 2) == pytest.approx(6 / 20)
    assert ControlField.constant(0.3).expand(5, 7) == 0.3
    assert ControlField("time", [0.1, 0.2]).field(n_x, n_t).shape == (4, 2)
    assert ControlField("space", [0.1, 0.2, 0.3, 0.4]).expand(0, 3) == 0.4
    with pytest.raises(CflViolation):
        ControlField.constant(0.5)
    with pytest.raises(ShapeMismatch):
        ControlField("time", [[0.1]])
    with pytest.raises(ShapeMismatch):
        ControlField("time", [0.1, 0.2, 0.3]).field(n_x, n_t)


@pytest.mark.parametrize("mode", list(Mode))
@given(seed=st.integers(0, 10_000))
def test_contract_is_adjoint_of_broadcast(mode, seed):
    rng = np.random.default_rng(seed)
    n_x, n_t = 4, 3
    p = rng.normal(size=mode.param_shape(n_x, n_t))
    G = rng.normal(size=(n_x + 1, n_t))
    lhs = np.sum(mode.broadcast(p, n_x, n_t) * G)
    rhs = np.sum(p * mode.contract(G))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_reference_constant_state_is_steady():
    g = Grid(41, 20, 0.01, 0.05)
    sol = reference_solve(np.full(20, 0.4), 1.0, g)
    assert np.allclose(sol.values, 0.4, atol=1e-15)


def test_reference_cfl_and_shapes():
    g = Grid(5, 10, 0.01, 0.1)
    with pytest.raises(CflViolation):
        reference_solve(np.full(10, 0.1), 6.0, g)
    with pytest.raises(ShapeMismatch):
        reference_solve(np.full(9, 0.1), 1.0, g)
    with pytest.raises(ShapeMismatch):
        reference_solve(np.full(10, 0.1), 1.0, g, save_every=3)
    sub = reference_solve(np.full(10, 0.1), 1.0, g, save_every=2)
    assert sub.shape == (3, 10) and sub.grid.dt == pytest.approx(0.02)


def test_riemann_rarefaction_stays_monotone():
    n = 60
    ic = np.where(np.arange(n) < n // 2, 1.0, 0.0)
    sol = reference_solve(ic, 1.0, Grid(81, n, 0.25 / n, 1.0 / n))
    assert np.all(np.diff(sol.values, axis=1) <= 1e-15)
    assert sol.values[-1, n // 2 - 3] < 1.0 and sol.values[-1, n // 2 + 3] > 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_reflexive_mass_balance_is_exact(kind):
    n = 300
    dx = 3.0 / n
    g = Grid(201, n, 0.25 * dx, dx, x0=-1.5 + dx / 2)
    ic = cell_averages(bump_profile, g.edges)
    sol = reference_solve(ic, 1.0, g, kind=kind)
    c = g.dt / g.dx
    U = sol.values
    change = U[1:].sum(axis=1) - U[:-1].sum(axis=1)
    balance = c * (U[:-1, 0] * (1 - U[:-1, 0]) - U[:-1, -1] * (1 - U[:-1, -1]))
    assert np.max(np.abs(change - balance)) <= 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_wall_boundaries_conserve_mass(kind):
    n = 300
    dx = 3.0 / n
    g = Grid(201, n, 0.25 * dx, dx, x0=-1.5 + dx / 2)
    ic = cell_averages(bump_profile, g.edges)
    mass = reference_solve(ic, 1.0, g, boundary="wall", kind=kind).values.sum(axis=1)
    assert np.max(np.abs(np.diff(mass))) <= 1e-12


def test_first_order_convergence():
    t_end = 0.5

    def solve(n):
        dx = 3.0 / n
        steps = int(round(t_end / (0.25 * dx)))
        g = Grid(steps + 1, n, t_end / steps, dx, x0=-1.5 + dx / 2)
        ic = cell_averages(bump_profile, g.edges)
        return reference_solve(ic, 1.0, g).values[-1]

    sols = {n: solve(n) for n in (150, 300, 600, 1200)}
    errors = []
    for n in (150, 300, 600):
        finer = restrict(sols[2 * n][None, :], SubdivisionSpec(1, 2))[0]
        errors.append(np.abs(sols[n] - finer).mean())
    ratios = np.array(errors[1:]) / np.array(errors[:-1])
    assert np.all(ratios < 1.0), errors


def test_crop_keeps_centres_inside():
    g = Grid(2, 30, 1.0, 0.1, x0=-1.45)
    sol = reference_solve(np.full(30, 0.2), 1.0, Grid(2, 30, 0.01, 0.1, x0=-1.45))
    cut = crop(sol, -1.0, 1.0)
    assert cut.grid.n_x == 20
    assert cut.grid.centers[0] == pytest.approx(-0.95)
    assert g.n_x == 30

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import double_cost, lz_constant, trajectory
from trotterctl.derivatives import (FD_EPS, GradientMethod, aux_propagator_derivative,
                                    derivative_stencil, fd_gradient, fd_gradient_columns,
                                    fidelity_gradient, fidelity_hessian, finite_difference_check,
                                    grad_aux, grad_ex_series, grad_st1, grad_st2, hess_ex,
                                    hess_st1, hess_st2, reg_amplitude, reg_smoothness,
                                    relative_difference)
from trotterctl.exceptions import InvalidInputError, InvalidStateError, UnsupportedModelError
from trotterctl.model import (BoundedSigmoid, FunctionControl, HamiltonianModel, LinearControl,
                              Problem, TimeGrid, make_problem)
from trotterctl.numerics import comm_series_tail, kmax_for_tol, matexp
from trotterctl.reference import ReferenceLandscape

seeds = st.integers(0, 2**32 - 1)
EXACT = ["ST1", "ST2", "ExSeries(9)", "ExAux"]


def max_rel(a, b):
    return float(np.max(relative_difference(a, b)))


def random_problem(seed, dim=4, n_t=40, dt=0.05):
    return make_problem("random", {"dim": dim, "n_t": n_t, "dt": dt}, seed=seed)


def random_control(seed, problem, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=(problem.model.n_controls,
                                                             problem.grid.n_t))


def commuting_problem(seed, dim=4, n_t=12, dt=0.05, n_controls=1):
    rng = np.random.default_rng(seed)
    drift = np.diag(rng.normal(size=dim)).astype(complex)
    controls = tuple(LinearControl(np.diag(rng.normal(size=dim))) for _ in range(n_controls))
    psi0 = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    target = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return Problem(HamiltonianModel(drift, controls), psi0 / np.linalg.norm(psi0),
                   target / np.linalg.norm(target), TimeGrid(dt, n_t))


def sigmoid_problem(seed, dim=3, n_t=8, dt=0.1):
    """Random drift with two diagonal controls, one of them non-bilinear."""
    rng = np.random.default_rng(seed)
    base = random_problem(seed, dim, n_t, dt)
    controls = (LinearControl(np.diag(rng.normal(size=dim)), BoundedSigmoid(-2.0, 3.0)),
                LinearControl(np.diag(rng.normal(size=dim))))
    return base._replace(model=HamiltonianModel(base.model.drift, controls))


def gradient(method, problem, u):
    method = GradientMethod.parse(method)
    return fidelity_gradient(method, problem.model, trajectory(problem, method.scheme, u), u)


def hessian(method, problem, u):
    method = GradientMethod.parse(method)
    return fidelity_hessian(method, problem.model, trajectory(problem, method.scheme, u), u)


# -- method labels ----------------------------------------------------------------

def test_gradient_method_parse():
    assert GradientMethod.parse("ExSeries(9)") == GradientMethod("ExSeries", 9)
    assert GradientMethod.parse("exseries(auto)").kmax is None
    assert GradientMethod.parse("ExSeries").label == "ExSeries(auto)"
    assert GradientMethod.parse(" st2 ").label == "ST2"
    assert [GradientMethod.parse(m).scheme.value for m in EXACT] == ["ST1", "ST2", "Ex2", "Ex2"]
    for bad in ("ExAux(3)", "ST1(1)", "Newton", "ExSeries(-1)"):
        with pytest.raises(InvalidInputError):
            GradientMethod.parse(bad)


def test_relative_difference_floor():
    rel = relative_difference([1e-13, 2.0], [0.0, 1.0])
    assert rel[0] == pytest.approx(0.1) and rel[1] == pytest.approx(1.0)


# -- stationary point ----------------------------------------------------------------

@pytest.mark.parametrize("method", ["ST1", "ST2", "ExSeries(9)", "ExAux", "ExSeries(0)"])
def test_gradient_vanishes_at_pi_pulse(method):
    p = make_problem("lz", {"T": np.pi, "dt": 0.075})
    u = np.zeros((1, p.grid.n_t))
    assert np.max(np.abs(gradient(method, p, u))) <= 1e-12


def test_hessian_psd_at_pi_pulse():
    p = make_problem("lz", {"T": np.pi, "dt": 0.25})
    u = np.zeros((1, p.grid.n_t))
    h = hessian("ExSeries(9)", p, u)
    assert np.min(np.linalg.eigvalsh(h)) >= -1e-10


# -- gradients against finite differences ------------------------------------------

@pytest.mark.parametrize("method", ["ST1", "ST2"])
def test_trotter_gradients_lz_constant(method):
    problem, u = lz_constant(5.0)
    scheme = GradientMethod.parse(method).scheme
    fd = ReferenceLandscape.from_problem(problem).fd_gradient(scheme.value, u)
    assert max_rel(gradient(method, problem, u), fd) <= 1e-6


@pytest.mark.parametrize("method", ["ExSeries(9)", "ExAux"])
def test_exact_gradients_lz_constant(method):
    problem, u = lz_constant(5.0)
    fd = fd_gradient(double_cost(problem, "Ex2"), u)
    assert max_rel(gradient(method, problem, u), fd) <= 1e-6


def test_first_order_gradient_is_poor():
    problem, u = lz_constant(5.0)
    report = finite_difference_check(double_cost(problem, "Ex2"), u,
                                      gradfn=lambda v: gradient("ExSeries(0)", problem, v))
    assert report.max_rel_diff > 1e-2


@pytest.mark.parametrize("method", ["ExSeries(9)", "ExAux", "ExSeries(auto)"])
def test_exact_gradients_random_model(method):
    problem = random_problem(11)
    u = random_control(11, problem)
    fd = fd_gradient(double_cost(problem, "Ex2"), u)
    assert max_rel(gradient(method, problem, u), fd) <= 1e-6


@pytest.mark.parametrize("method", ["ST1", "ST2"])
def test_trotter_gradients_random_model(method):
    problem = random_problem(12)
    u = random_control(12, problem)
    fd = fd_gradient(double_cost(problem, GradientMethod.parse(method).scheme), u)
    assert max_rel(gradient(method, problem, u), fd) <= 1e-6


@pytest.mark.parametrize("method", EXACT)
def test_lz_random_controls(method):
    """20 uniform(-10, 10) LZ controls. The landscape is differenced in extended
    precision: double-precision cost rounding (~1e-11 after division by eps)
    exceeds 1e-6 of the smallest entries, and ST1's first and last entries are
    exact zeros."""
    problem = make_problem("lz")
    scheme = GradientMethod.parse(method).scheme.value
    ref = ReferenceLandscape.from_problem(problem)
    worst = 0.0
    for seed in range(20):
        u = random_control(seed, problem, -10, 10)
        worst = max(worst, max_rel(gradient(method, problem, u), ref.fd_gradient(scheme, u)))
    assert worst <= 1e-6


@pytest.mark.parametrize("scheme", ["Ex1", "Ex2", "ST1", "ST2"])
def test_reference_landscape_consistency(scheme):
    problem = make_problem("lz", {"T": 1.0, "dt": 0.1})
    u = random_control(0, problem, -3, 3)
    ref = ReferenceLandscape.from_problem(problem)
    assert ref.cost(scheme, u) == pytest.approx(double_cost(problem, scheme)(u), abs=1e-14)
    local = ref.fd_gradient(scheme, u)
    # full re-evaluation; costs stay in extended precision until differenced
    full = fd_gradient(lambda v: ref.cost_mp(scheme, v), u)
    assert np.max(np.abs(local - full)) <= 1e-9 * np.max(np.abs(local))
    exact = ref.exact_gradient(scheme, u)
    assert np.max(np.abs(local - exact)) <= 1e-8 * np.max(np.abs(exact))


def test_gauge_entries_vanish_under_st1():
    problem, u = lz_constant(5.0)
    g = gradient("ST1", problem, u)
    # pure global phase on an eigenstate: only rounding of Re(o* do) survives
    assert abs(g[0, 0]) <= 1e-20 and abs(g[0, -1]) <= 1e-20
    assert np.all(g[0, 1:-1] != 0.0)


@pytest.mark.parametrize("method", ["ST2", "ExSeries(9)", "ExAux", "ExSeries(0)"])
def test_inactive_last_entry_is_zero(method):
    problem = random_problem(3, n_t=15)
    g = gradient(method, problem, random_control(3, problem))
    assert np.all(g[:, -1] == 0.0)


@given(seeds)
@settings(max_examples=10)
def test_aux_equals_converged_series(seed):
    problem = random_problem(seed, n_t=20)
    u = random_control(seed, problem)
    k = kmax_for_tol(problem.grid.dt)
    aux = gradient("ExAux", problem, u)
    series = gradient(f"ExSeries({k})", problem, u)
    assert np.max(np.abs(aux - series)) / np.max(np.abs(aux)) <= 1e-12
    assert max_rel(series, aux) <= 1e-9


def test_aux_block_on_commuting_model():
    rng = np.random.default_rng(0)
    h = np.diag(rng.normal(size=5)).astype(complex)
    dh = np.diag(rng.normal(size=5)).astype(complex)
    dt = 0.1
    u_step, du = aux_propagator_derivative(h, dh, dt)
    assert np.max(np.abs(du - (-1j * dt) * dh @ matexp(-1j * dt * h))) <= 1e-12
    assert np.max(np.abs(u_step - matexp(-1j * dt * h))) <= 1e-14


def test_st1_gradient_is_first_order_series_form():
    problem = random_problem(4, n_t=25)
    u = random_control(4, problem)
    traj = trajectory(problem, "ST1", u)
    g = grad_st1(problem.model, traj, u)
    hp = problem.model.controls[0].operator
    dt = problem.grid.dt
    for n in range(1, problem.grid.n_t - 1):
        s = comm_series_tail(np.zeros_like(hp), hp, dt, 0)
        ref = -np.real(np.conj(traj.overlap) * (-1j * dt) * np.vdot(traj.chi[n], s @ traj.psi[n]))
        assert g[0, n] == pytest.approx(ref, rel=1e-12)


def test_st1_endpoint_weight_localization():
    problem = random_problem(5, n_t=20)
    u = random_control(5, problem)
    fd = fd_gradient(double_cost(problem, "ST1"), u)
    g = gradient("ST1", problem, u)
    assert max_rel(g, fd) <= 1e-6
    broken = g.copy()
    broken[0, [0, -1]] *= 2
    bad = np.flatnonzero(relative_difference(broken, fd)[0] > 1e-6)
    assert list(bad) == [0, problem.grid.n_t - 1]


def test_st2_equals_ex_on_commuting_model():
    problem = commuting_problem(1, n_t=30)
    u = random_control(1, problem, -3, 3)
    st2 = gradient("ST2", problem, u)
    for method in ("ExSeries(0)", "ExSeries(9)", "ExAux"):
        assert np.max(np.abs(gradient(method, problem, u) - st2)) <= 1e-12 * np.max(np.abs(st2))


def test_series_gradient_converges_monotonically():
    problem, u = lz_constant(5.0)
    traj = trajectory(problem, "Ex2", u)
    grads = [grad_ex_series(problem.model, traj, u, k) for k in range(kmax_for_tol(0.075) + 1)]
    steps = [np.max(np.abs(grads[k] - grads[k - 1])) for k in range(1, len(grads))]
    assert all(b < a for a, b in zip(steps, steps[1:]))


def test_scheme_mismatch_and_diagonal_requirement():
    problem, u = lz_constant(1.0, n_t=6)
    ex = trajectory(problem, "Ex2", u)
    st = trajectory(problem, "ST1", u)
    with pytest.raises(InvalidStateError):
        grad_st1(problem.model, ex, u)
    with pytest.raises(InvalidStateError):
        grad_aux(problem.model, st, u)
    with pytest.raises(InvalidStateError):
        hess_st2(problem.model, st, u)
    dense = HamiltonianModel(np.diag([0.0, 1.0]),
                             (LinearControl(np.array([[0, 1], [1, 0]], dtype=complex)),))
    with pytest.raises(UnsupportedModelError):
        grad_st2(dense, trajectory(problem, "ST2", u), u)


# -- Hessians -------------------------------------------------------------------------

def fd_of_gradient(method, problem, u):
    return fd_gradient_columns(lambda v: gradient(method, problem, v), u)


@pytest.mark.parametrize("method", ["ST2", "ExSeries(9)"])
def test_hessian_lz_n8(method):
    problem, u = lz_constant(5.0, n_t=8)
    h = hessian(method, problem, u)
    assert np.array_equal(h, h.T)
    assert max_rel(h, fd_of_gradient(method, problem, u)) <= 1e-5


def test_hessian_st1_lz_n8():
    """Columns of the phase directions are exact zeros, so the analytic
    gradient is differenced through the extended-precision landscape."""
    problem, u = lz_constant(5.0, n_t=8)
    h = hessian("ST1", problem, u)
    assert np.array_equal(h, h.T)
    ref = ReferenceLandscape.from_problem(problem)
    fd = fd_gradient_columns(lambda v: ref.exact_gradient("ST1", v), u)
    assert max_rel(h, fd) <= 1e-5


@pytest.mark.parametrize("method", ["ST1", "ST2", "ExSeries(auto)"])
@pytest.mark.parametrize("seed", [0, 1])
def test_hessians_random_nonbilinear_two_controls(method, seed):
    problem = sigmoid_problem(seed)
    u = random_control(seed, problem, -2, 2)
    h = hessian(method, problem, u)
    assert np.array_equal(h, h.T)
    assert h.shape == (2 * problem.grid.n_t,) * 2
    assert max_rel(h, fd_of_gradient(method, problem, u)) <= 1e-5


@pytest.mark.parametrize("method", ["ST1", "ST2", "ExSeries(auto)"])
def test_gradients_random_nonbilinear_two_controls(method):
    problem = sigmoid_problem(7, n_t=10)
    u = random_control(7, problem, -2, 2)
    scheme = GradientMethod.parse(method).scheme
    assert max_rel(gradient(method, problem, u),
                   fd_gradient(double_cost(problem, scheme), u)) <= 1e-6


def test_st2_hessian_matches_exact_on_commuting_model():
    problem = commuting_problem(2, n_t=9)
    u = random_control(2, problem, -3, 3)
    h_st = hessian("ST2", problem, u)
    h_ex = hessian("ExSeries(9)", problem, u)
    inner = slice(0, problem.grid.n_t - 1)
    assert np.max(np.abs(h_st[inner, inner] - h_ex[inner, inner])) <= 1e-8
    assert np.all(h_st[-1] == 0) and np.all(h_st[:, -1] == 0)


def test_st1_curvature_term_enters_diagonal_only():
    """A nonzero Hc'' changes only the diagonal, by -Re(conj(o) (-i w_n) <chi_n|Hc''|psi_n>);
    for a bilinear control that term is absent."""
    problem, u = lz_constant(2.0, n_t=6)
    op = problem.model.controls[0].operator
    curv = np.diag([0.7, -0.2]).astype(complex)
    bent = HamiltonianModel(problem.model.drift,
                            (FunctionControl(lambda x: x * op, lambda x: op, lambda x: curv,
                                             diagonal=True),))
    traj = trajectory(problem, "ST1", u)
    plain = hess_st1(problem.model, traj, u)
    curved = hess_st1(bent, traj, u)
    diff = curved - plain
    assert not (diff - np.diag(np.diagonal(diff))).any()
    w = np.full(6, problem.grid.dt)
    w[[0, -1]] /= 2
    expected = [-np.real(np.conj(traj.overlap) * (-1j * w[n])
                         * np.vdot(traj.chi[n], curv @ traj.psi[n])) for n in range(6)]
    assert np.allclose(np.diagonal(diff), expected, rtol=1e-12, atol=1e-15)


def test_hess_ex_requires_ex_trajectory():
    problem, u = lz_constant(1.0, n_t=6)
    with pytest.raises(InvalidStateError):
        hess_ex(problem.model, trajectory(problem, "ST2", u), u)


# -- regularization -------------------------------------------------------------------

def test_amplitude_examples():
    cost, grad, hdiag = reg_amplitude(np.zeros((1, 10)), 0.3, 0.1)
    assert cost == 0 and not grad.any() and np.allclose(hdiag, 0.03)
    cost, grad, _ = reg_amplitude(np.ones((1, 10)), 0.3, 0.1)
    assert cost == pytest.approx(5 * 0.3 * 0.1)
    assert np.allclose(grad, 0.03)


QUADRATIC_EPS = 0.25


@given(seeds)
def test_amplitude_fd(seed):
    u = np.random.default_rng(seed).normal(size=(2, 9))
    # quadratic: central differences are exact at any step, so a wide step
    # removes the ulp(J)/eps rounding that dominates at small entries
    report = finite_difference_check(lambda v: reg_amplitude(v, 0.7, 0.05)[0], u,
                                     gradfn=lambda v: reg_amplitude(v, 0.7, 0.05)[1],
                                     eps=QUADRATIC_EPS)
    assert report.max_rel_diff <= 1e-8


def test_smoothness_constant_and_ramp():
    cost, grad, _ = reg_smoothness(np.full(9, 2.5), 1.0, 0.1)
    assert cost == 0 and np.max(np.abs(grad)) <= 1e-13
    cost, grad, _ = reg_smoothness(0.3 * np.arange(12.0), 1.0, 0.1)
    assert np.max(np.abs(grad[3:-3])) <= 1e-13
    assert np.any(np.abs(grad[[0, 1, 2, -3, -2, -1]]) > 1e-3)


def test_smoothness_stencil_rows():
    gamma, dt, n_t = 0.4, 0.05, 12
    _, _, hess = reg_smoothness(np.zeros(n_t), gamma, dt)
    rows = hess / (gamma / (4 * dt))
    expected = {
        0: [10, -12, 2],
        1: [-12, 17, -4, -1],
        2: [2, -4, 3, 0, -1],
    }
    for i, row in expected.items():
        assert np.array_equal(rows[i, :len(row)], row) and not rows[i, len(row):].any()
        mirror = rows[n_t - 1 - i, ::-1]
        assert np.array_equal(mirror[:len(row)], row) and not mirror[len(row):].any()
    for i in range(3, n_t - 3):
        assert np.array_equal(rows[i, i - 2:i + 3], [-1, 0, 2, 0, -1])
        assert np.count_nonzero(rows[i]) == 3


def test_smoothness_bulk_gradient_sign():
    u = np.random.default_rng(0).normal(size=12)
    gamma, dt = 1.0, 0.1
    _, grad, _ = reg_smoothness(u, gamma, dt)
    n = 5
    assert grad[n] == pytest.approx(gamma / (4 * dt) * (2 * u[n] - u[n - 2] - u[n + 2]))


@given(seeds, st.integers(5, 16))
def test_smoothness_fd(seed, n_t):
    u = np.random.default_rng(seed).normal(size=(2, n_t))
    fn = lambda v: reg_smoothness(v, 0.8, 0.05)  # noqa: E731
    report = finite_difference_check(lambda v: fn(v)[0], u, gradfn=lambda v: fn(v)[1],
                                     hessfn=lambda v: fn(v)[2], eps=QUADRATIC_EPS)
    assert report.max_rel_diff <= 1e-8


def test_smoothness_needs_five_points():
    with pytest.raises(InvalidInputError):
        reg_smoothness(np.zeros(4), 1.0, 0.1)
    assert derivative_stencil(5).shape == (5, 5)


# -- finite-difference harness ---------------------------------------------------------

def test_fd_of_quadratic_is_exact():
    # cost of order one keeps rounding, ulp(J)/eps, well under the tolerance
    u = np.linspace(-1, 1, 5)
    report = finite_difference_check(lambda v: 0.5 * float(v @ v), u)
    assert np.max(np.abs(report.fd_gradient - u)) <= 1e-10


def test_fd_check_st1_extended_precision():
    problem, u = lz_constant(5.0)
    ref = ReferenceLandscape.from_problem(problem)
    report = finite_difference_check(lambda v: ref.cost("ST1", v), u,
                                     gradfn=lambda v: gradient("ST1", problem, v))
    assert report.max_rel_diff <= 1e-6
    assert report.wall_time > 0 and report.gradient.shape == u.shape


def test_fd_eps_default():
    assert FD_EPS == pytest.approx(6.055e-6, rel=1e-3)

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_hermitian
from trotterctl.exceptions import InvalidInputError
from trotterctl.model import SIGMA_X, SIGMA_Y, SIGMA_Z
from trotterctl.numerics import (EPS_MACH, comm_deriv_tail, comm_series_tail, commutator,
                                 expm_diagonal, herm_eig, kmax_for_tol, matexp,
                                 recursive_commutator)

seeds = st.integers(0, 2**32 - 1)


def eig_expm(a_herm, scale):
    """exp(scale * H) through the eigendecomposition of a Hermitian H."""
    w, v = np.linalg.eigh(a_herm)
    return (v * np.exp(scale * w)) @ v.conj().T


def mp_expm(a):
    with mpmath.workdps(40):
        out = mpmath.expm(mpmath.matrix(a.tolist()))
        return np.array(out.tolist(), dtype=complex)


# -- matexp ----------------------------------------------------------------------

@pytest.mark.parametrize("dim", [1, 2, 5])
def test_matexp_zero_is_identity(dim):
    assert np.array_equal(matexp(np.zeros((dim, dim))), np.eye(dim))


def test_matexp_pauli_rotation():
    out = matexp(-1j * (np.pi / 2) * SIGMA_X)
    assert np.allclose(out, -1j * SIGMA_X, atol=1e-15)


def test_matexp_matches_eigendecomposition_8x8(rng):
    h = random_hermitian(rng, 8)
    assert np.max(np.abs(matexp(-1j * h) - eig_expm(h, -1j))) <= 1e-12


def test_matexp_non_normal_against_mpmath(rng):
    a = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    ref = mp_expm(a)
    assert np.max(np.abs(matexp(a) - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_matexp_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        matexp(np.array([[np.nan, 0], [0, 1]]))
    with pytest.raises(InvalidInputError):
        matexp(np.eye(2), tol=1e-3)
    with pytest.raises(InvalidInputError):
        matexp(np.ones((2, 3)))


@given(seeds, st.integers(1, 12), st.floats(0.01, 30.0))
def test_matexp_unitary_for_anti_hermitian(seed, dim, scale):
    h = random_hermitian(np.random.default_rng(seed), dim)
    u = matexp(-1j * scale * h)
    assert np.max(np.abs(u.conj().T @ u - np.eye(dim))) <= 1e-11


@given(seeds, st.integers(1, 8))
def test_matexp_commuting_split(seed, dim):
    rng = np.random.default_rng(seed)
    a = np.diag(1j * rng.normal(size=dim))
    b = np.diag(1j * rng.normal(size=dim))
    assert np.max(np.abs(matexp(a + b) - matexp(a) @ matexp(b))) <= 1e-11


def test_expm_diagonal_unit_modulus(rng):
    phases = expm_diagonal(-1j * rng.normal(scale=50, size=64))
    assert np.max(np.abs(np.abs(phases) - 1)) <= 1e-14


def _slope(alphas, errors):
    return np.polyfit(np.log(alphas), np.log(errors), 1)[0]


@given(seeds)
def test_first_order_trotter_remainder_is_third_order(seed):
    rng = np.random.default_rng(seed)
    a, b = random_hermitian(rng, 4), random_hermitian(rng, 4)
    a, b = -1j * a, -1j * b
    alphas = [0.1, 0.05, 0.025]
    errors = [np.max(np.abs(matexp(x * (a + b)) - matexp(x * a) @ matexp(x * b)
                            - x * x / 2 * commutator(b, a)))
              for x in alphas]
    assert _slope(alphas, errors) >= 2.7


@given(seeds)
def test_symmetric_splitting_is_third_order(seed):
    rng = np.random.default_rng(seed)
    a, b = -1j * random_hermitian(rng, 4), -1j * random_hermitian(rng, 4)
    alphas = [0.1, 0.05, 0.025]
    errors = [np.max(np.abs(matexp(x * (a + b))
                            - matexp(x * b / 2) @ matexp(x * a) @ matexp(x * b / 2)))
              for x in alphas]
    assert _slope(alphas, errors) >= 2.7


# -- herm_eig --------------------------------------------------------------------

def test_herm_eig_sigma_z():
    w, r = herm_eig(SIGMA_Z)
    assert np.allclose(w, [-1, 1])
    assert np.allclose(np.abs(r), np.eye(2)[:, ::-1])


def test_herm_eig_sigma_x():
    w, r = herm_eig(SIGMA_X)
    assert np.allclose(w, [-1, 1])
    # columns are (1, -1)/sqrt2 and (1, 1)/sqrt2 up to a phase
    for col, ref in zip(r.T, [np.array([1, -1]) / np.sqrt(2), np.array([1, 1]) / np.sqrt(2)]):
        assert abs(abs(np.vdot(ref, col)) - 1) < 1e-14


def test_herm_eig_reconstruction_9x9(rng):
    h = random_hermitian(rng, 9)
    w, r = herm_eig(h)
    assert np.max(np.abs((r * w) @ r.conj().T - h)) <= 1e-10


def test_herm_eig_rejects_non_hermitian():
    with pytest.raises(InvalidInputError):
        herm_eig(np.array([[0, 1], [0, 0]], dtype=complex))


@given(seeds, st.integers(1, 10))
def test_herm_eig_properties(seed, dim):
    h = random_hermitian(np.random.default_rng(seed), dim)
    w, r = herm_eig(h)
    off = r.conj().T @ h @ r
    off[np.diag_indices(dim)] = 0
    assert np.max(np.abs(off)) <= 1e-10
    assert np.max(np.abs(r.conj().T @ r - np.eye(dim))) <= 1e-12
    assert np.all(np.diff(w) >= 0)
    w2, r2 = herm_eig(h.copy())
    assert np.array_equal(w, w2) and np.array_equal(r, r2)
    # phase convention: largest-magnitude entry of each column real positive
    lead = r[np.argmax(np.abs(r), axis=0), np.arange(dim)]
    assert np.all(lead.real > 0) and np.max(np.abs(lead.imag)) <= 1e-15


# -- commutators -----------------------------------------------------------------

def test_recursive_commutator_base_case(rng):
    x, y = random_hermitian(rng, 3), random_hermitian(rng, 3)
    assert np.array_equal(recursive_commutator(x, y, 0), y)


def test_recursive_commutator_diagonals_vanish(rng):
    x, y = np.diag(rng.normal(size=4)), np.diag(rng.normal(size=4))
    for k in (1, 2, 5):
        assert np.array_equal(recursive_commutator(x, y, k), np.zeros((4, 4)))


def test_recursive_commutator_pauli():
    assert np.allclose(recursive_commutator(SIGMA_Z, SIGMA_X, 1), 2j * SIGMA_Y)
    assert np.allclose(recursive_commutator(SIGMA_Z, SIGMA_X, 2), 4 * SIGMA_X)


def test_recursive_commutator_dim_mismatch():
    with pytest.raises(InvalidInputError):
        recursive_commutator(np.eye(2), np.eye(3), 1)


@given(seeds, st.integers(0, 4))
def test_recursive_commutator_matches_expanded_form(seed, k):
    rng = np.random.default_rng(seed)
    x, y = random_hermitian(rng, 3), random_hermitian(rng, 3)
    # [X,Y]_k = sum_j binom(k,j) (-1)^j X^(k-j) Y X^j
    ref = sum(math.comb(k, j) * (-1) ** j
              * np.linalg.matrix_power(x, k - j) @ y @ np.linalg.matrix_power(x, j)
              for j in range(k + 1))
    assert np.allclose(recursive_commutator(x, y, k), ref, atol=1e-10 * (1 + np.abs(ref).max()))


# -- commutator series -----------------------------------------------------------

def lz_h(u):
    return 0.5 * (SIGMA_X + u * SIGMA_Z)


def test_series_kmax_zero_is_hc_prime(rng):
    h, hp = random_hermitian(rng, 3), random_hermitian(rng, 3)
    assert np.array_equal(comm_series_tail(h, hp, 0.1, 0), hp)


def test_series_terminates_for_commuting_pair(rng):
    h, hp = np.diag(rng.normal(size=3)), np.diag(rng.normal(size=3))
    for kmax in (0, 3, 9):
        assert np.allclose(comm_series_tail(h, hp, 0.1, kmax), hp, atol=0)


def test_series_first_derivative_lz_fd():
    dt, u, eps = 0.075, 5.0, 1e-6
    exact = matexp(-1j * dt * lz_h(u))
    analytic = exact @ ((-1j * dt) * comm_series_tail(lz_h(u), 0.5 * SIGMA_Z, dt, 9))
    fd = (matexp(-1j * dt * lz_h(u + eps)) - matexp(-1j * dt * lz_h(u - eps))) / (2 * eps)
    assert np.max(np.abs(analytic - fd)) / np.max(np.abs(fd)) <= 1e-6


def test_series_second_derivative_lz_fd():
    """d2U/du2 = U (-i dt) [S' + (-i dt) S^2] with S' from comm_deriv_tail."""
    dt, u, eps = 0.075, 5.0, 1e-4
    hp, hpp = 0.5 * SIGMA_Z, np.zeros((2, 2))

    def d2(uu):
        h = lz_h(uu)
        s = comm_series_tail(h, hp, dt, 12)
        ds = comm_deriv_tail(h, hp, hpp, dt, 12)
        return matexp(-1j * dt * h) @ ((-1j * dt) * (ds + (-1j * dt) * s @ s))

    fd = (matexp(-1j * dt * lz_h(u + eps)) - 2 * matexp(-1j * dt * lz_h(u))
          + matexp(-1j * dt * lz_h(u - eps))) / eps**2
    assert np.max(np.abs(d2(u) - fd)) / np.max(np.abs(fd)) <= 1e-5


def test_deriv_tail_base_cases(rng):
    h, hp, hpp = (random_hermitian(rng, 3) for _ in range(3))
    assert np.array_equal(comm_deriv_tail(h, hp, hpp, 0.1, 0), hpp)
    dh, dp = np.diag(rng.normal(size=3)), np.diag(rng.normal(size=3))
    for kmax in (0, 4, 9):
        assert np.array_equal(comm_deriv_tail(dh, dp, np.zeros((3, 3)), 0.1, kmax), np.zeros((3, 3)))


def test_deriv_tail_matches_fd_of_series_nonlinear(rng):
    """Control Hc(u) = sin(u) A + u^2 B, drift D: FD of S(u) equals the tail."""
    d, a, b = (random_hermitian(rng, 3) for _ in range(3))
    dt, u, eps, kmax = 0.05, 0.7, 1e-5, 6

    def parts(uu):
        return d + np.sin(uu) * a + uu**2 * b, np.cos(uu) * a + 2 * uu * b, -np.sin(uu) * a + 2 * b

    h, hp, hpp = parts(u)
    s_up = comm_series_tail(*parts(u + eps)[:2], dt, kmax)
    s_dn = comm_series_tail(*parts(u - eps)[:2], dt, kmax)
    fd = (s_up - s_dn) / (2 * eps)
    assert np.max(np.abs(comm_deriv_tail(h, hp, hpp, dt, kmax) - fd)) <= 1e-8


@given(seeds, st.integers(1, 10))
def test_series_term_magnitude_bound(seed, kmax):
    rng = np.random.default_rng(seed)
    h, hp = random_hermitian(rng, 3), random_hermitian(rng, 3)
    dt = 0.075
    s_k = comm_series_tail(h, hp, dt, kmax)
    step = s_k - comm_series_tail(h, hp, dt, kmax - 1)
    bound = dt**kmax / math.factorial(kmax + 1) * np.max(np.abs(recursive_commutator(h, hp, kmax)))
    # the difference of two sums carries rounding of order eps * |S|
    assert np.max(np.abs(step)) <= bound * (1 + 1e-9) + 8 * EPS_MACH * np.max(np.abs(s_k))


# -- truncation rule -------------------------------------------------------------

def _direct_kmax(dt, tol):
    return next(k for k in range(60) if dt ** (k + 1) / math.factorial(k + 1) <= tol)


def test_kmax_for_tol_default_grid():
    # The smallest k with dt^(k+1)/(k+1)! <= eps is 8 (bound 2.07e-16);
    # a 9-term series (kmax = 9) also satisfies it.
    assert kmax_for_tol(0.075, 2.22e-16) == 8
    assert 0.075**10 / math.factorial(10) <= 2.22e-16
    assert 0.075**9 / math.factorial(9) <= 2.22e-16 < 0.075**8 / math.factorial(8)


def test_kmax_for_tol_tiny_step():
    assert kmax_for_tol(1e-16, 2.22e-16) == 0


def test_kmax_for_tol_transmon_step():
    assert kmax_for_tol(0.025, 2.22e-16) == _direct_kmax(0.025, 2.22e-16) == 7


@given(st.floats(1e-6, 2.0), st.floats(1e-18, 1e-3))
def test_kmax_for_tol_is_smallest(dt, tol):
    k = kmax_for_tol(dt, tol)
    assert k == _direct_kmax(dt, tol)


def test_kmax_norm_scaling():
    assert kmax_for_tol(0.025, EPS_MACH, norm=2.0) == kmax_for_tol(0.05, EPS_MACH)
    with pytest.raises(InvalidInputError):
        kmax_for_tol(-1.0)

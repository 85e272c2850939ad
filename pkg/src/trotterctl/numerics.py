"""Dense complex linear algebra: matrix exponential, Hermitian eigensolver and
the recursive-commutator series behind exact propagator derivatives.

All functions are pure; inputs are never modified.
"""
from math import factorial

import numpy as np

from ._validation import (check_hermitian, check_non_negative, check_positive,
                          check_same_shape, check_square_matrix)
from .exceptions import InvalidInputError

EPS_MACH = float(np.finfo(float).eps)

# Scaled operator norm that the Taylor series is evaluated at.
_TAYLOR_RADIUS = 0.5
_MAX_TAYLOR_TERMS = 60


def matexp(a, tol=1e-15):
    """Matrix exponential by scaling and squaring of a truncated Taylor series.

    The matrix is scaled by ``2**-s`` until its 1-norm is at most 0.5, the
    series is summed until a term's largest entry drops below `tol`, and the
    result is squared ``s`` times.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Finite complex matrix.
    tol : float
        Truncation threshold, ``0 < tol <= 1e-6``.

    Returns
    -------
    ndarray, shape (n, n)
    """
    a = check_square_matrix(a, "a")
    tol = check_positive(tol, "tol")
    if tol > 1e-6:
        raise InvalidInputError(f"tol must lie in (0, 1e-6], got {tol:g}")
    norm = np.abs(a).sum(axis=0).max()
    squarings = 0
    if norm > _TAYLOR_RADIUS:
        squarings = int(np.ceil(np.log2(norm / _TAYLOR_RADIUS)))
        a = a / 2.0 ** squarings
    result = np.eye(a.shape[0], dtype=complex) + a
    term = a
    for k in range(2, _MAX_TAYLOR_TERMS):
        term = term @ a / k
        result += term
        if np.abs(term).max() <= tol:
            break
    for _ in range(squarings):
        result = result @ result
    return result


def expm_diagonal(diag):
    """Element-wise exponential of a diagonal given as a vector."""
    return np.exp(np.asarray(diag, dtype=complex))


def herm_eig(h):
    """Eigendecomposition of a Hermitian matrix.

    Eigenvalues are returned in ascending order. Each eigenvector column is
    rephased so that its largest-magnitude entry is real and positive, which
    makes the basis deterministic for identical input.

    Returns
    -------
    eigenvalues : ndarray of float
    r : ndarray, unitary with ``r.conj().T @ h @ r`` diagonal
    """
    h = check_hermitian(h, "h")
    eigenvalues, r = np.linalg.eigh(0.5 * (h + h.conj().T))
    pivots = np.argmax(np.abs(r), axis=0)
    phases = r[pivots, np.arange(r.shape[1])]
    r = r * (np.abs(phases) / phases)[np.newaxis, :]
    return eigenvalues, r


def commutator(x, y):
    return x @ y - y @ x


def recursive_commutator(x, y, k):
    """Nested commutator ``[X, Y]_k = [X, [X, Y]_{k-1}]`` with ``[X, Y]_0 = Y``."""
    x = check_square_matrix(x, "x")
    y = check_square_matrix(y, "y")
    check_same_shape(x, y, names="x and y")
    if int(k) != k or k < 0:
        raise InvalidInputError(f"k must be a non-negative integer, got {k!r}")
    for _ in range(int(k)):
        y = commutator(x, y)
    return y


def _series_coefficients(dt, kmax):
    return [(1j * dt) ** k / factorial(k + 1) for k in range(kmax + 1)]


def comm_series_tail(h, hc_prime, dt, kmax):
    r"""Truncated series ``S = sum_{k=0}^{kmax} (i dt)^k / (k+1)! [H, H']_k``.

    With ``S`` summed to convergence, the derivative of the exact step
    propagator is ``dU/du = U (-i dt) S``.
    """
    h = check_square_matrix(h, "h")
    hc_prime = check_square_matrix(hc_prime, "hc_prime")
    check_same_shape(h, hc_prime, names="h and hc_prime")
    dt = check_positive(dt, "dt")
    kmax = _check_kmax(kmax)
    return _series(h, hc_prime, _series_coefficients(dt, kmax))


def _series(h, y, coefficients):
    total = coefficients[0] * y
    nested = y
    for c in coefficients[1:]:
        nested = h @ nested - nested @ h
        total += c * nested
    return total


def comm_deriv_tail(h, hc_prime, hc_second, dt, kmax, dh=None):
    r"""Control derivative of :func:`comm_series_tail`.

    Sums ``(i dt)^k / (k+1)! D_k`` where ``D_k`` is the derivative of
    ``[H, H']_k``, generated by the product rule
    ``D_0 = H''`` and ``D_k = [dH, [H, H']_{k-1}] + [H, D_{k-1}]``.

    `dh` is the derivative of ``H`` with respect to the differentiation
    variable. It defaults to `hc_prime` (both derivatives taken with respect
    to the same control); pass another control's derivative for mixed
    second derivatives, with `hc_second` the matching mixed derivative.
    """
    h = check_square_matrix(h, "h")
    hc_prime = check_square_matrix(hc_prime, "hc_prime")
    hc_second = check_square_matrix(hc_second, "hc_second")
    dh = hc_prime if dh is None else check_square_matrix(dh, "dh")
    check_same_shape(h, hc_prime, hc_second, dh, names="h, hc_prime, hc_second, dh")
    dt = check_positive(dt, "dt")
    kmax = _check_kmax(kmax)
    return _deriv_series(h, hc_prime, hc_second, dh, _series_coefficients(dt, kmax))


def _deriv_series(h, y, dy, dh, coefficients):
    total = coefficients[0] * dy
    nested, dnested = y, dy
    for c in coefficients[1:]:
        dnested = commutator(dh, nested) + commutator(h, dnested)
        nested = commutator(h, nested)
        total += c * dnested
    return total


def _check_kmax(kmax):
    if int(kmax) != kmax or kmax < 0:
        raise InvalidInputError(f"kmax must be a non-negative integer, got {kmax!r}")
    return int(kmax)


def kmax_for_tol(dt, tol=EPS_MACH, norm=1.0):
    """Smallest ``k`` with ``(norm*dt)^(k+1) / (k+1)! <= tol``.

    With the default ``norm=1`` this is the usual truncation rule for the
    commutator series; a larger `norm` (e.g. a bound on ``2||H||``) accounts
    for growth of the nested commutators.
    """
    dt = check_positive(dt, "dt")
    tol = check_positive(tol, "tol")
    norm = check_non_negative(norm, "norm")
    x = norm * dt
    k = 0
    bound = x
    while bound > tol:
        k += 1
        bound *= x / (k + 1)
        if k > 500:
            raise InvalidInputError("series bound does not fall below tol within 500 terms")
    return k

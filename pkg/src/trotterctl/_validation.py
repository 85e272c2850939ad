"""Input validation helpers shared by the public functions."""
import numbers

import numpy as np

from .exceptions import InvalidInputError

HERMITIAN_ATOL = 1e-10


def check_square_matrix(a, name="matrix"):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a.astype(complex, copy=False)


def check_same_shape(*arrays, names=None):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise InvalidInputError(f"dimension mismatch between {names or 'operands'}: {sorted(shapes)}")


def check_hermitian(a, name="matrix", atol=HERMITIAN_ATOL):
    a = check_square_matrix(a, name)
    if np.max(np.abs(a - a.conj().T)) > atol:
        raise InvalidInputError(f"{name} is not Hermitian to {atol:g}")
    return a


def check_state(psi, dim, name="state"):
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (dim,):
        raise InvalidInputError(f"{name} must have shape ({dim},), got {psi.shape}")
    if not np.all(np.isfinite(psi)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return psi


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise InvalidInputError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_non_negative(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise InvalidInputError(f"{name} must be a non-negative finite number, got {value!r}")
    return float(value)


def check_control(u, n_controls, n_t=None):
    """Return ``u`` as a float array of shape ``(n_controls, n_t)``.

    A 1-D input is accepted when there is a single control.
    """
    u = getattr(u, "values", u)
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and n_controls == 1:
        u = u[np.newaxis, :]
    if u.ndim != 2 or u.shape[0] != n_controls:
        raise InvalidInputError(f"control must have shape ({n_controls}, n_t), got {u.shape}")
    if n_t is not None and u.shape[1] != n_t:
        raise InvalidInputError(f"control has {u.shape[1]} time points, grid has {n_t}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("control has non-finite entries")
    return u

"""Hamiltonians, controls and the built-in benchmark problems.

A :class:`HamiltonianModel` is a constant drift plus ``K`` control terms.
Each :class:`ControlTerm` maps a real control value to a Hermitian matrix and
supplies its first and second derivatives (chain rule through an optional
:class:`Parametrization` already applied).
"""
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from ._validation import (check_control, check_hermitian, check_positive,
                          check_square_matrix, check_state)
from .exceptions import InvalidInputError, UnsupportedModelError
from .numerics import herm_eig

COMMUTE_ATOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Regular time grid ``t_j = (j-1) dt`` for ``j = 1..n_t``."""

    dt: float
    n_t: int

    def __post_init__(self):
        check_positive(self.dt, "dt")
        if int(self.n_t) != self.n_t or self.n_t < 2:
            raise InvalidInputError(f"n_t must be an integer >= 2, got {self.n_t!r}")

    @classmethod
    def from_duration(cls, duration, dt):
        """Grid spanning exactly `duration` with a step no larger than `dt`."""
        duration = check_positive(duration, "duration")
        dt = check_positive(dt, "dt")
        steps = max(1, math.ceil(duration / dt - 1e-9))
        return cls(duration / steps, steps + 1)

    @property
    def duration(self):
        return (self.n_t - 1) * self.dt

    @property
    def times(self):
        return np.arange(self.n_t) * self.dt


@dataclass(frozen=True)
class ControlVector:
    """Control values of shape ``(k_controls, n_t)`` on a :class:`TimeGrid`."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[np.newaxis, :]
        object.__setattr__(self, "values", check_control(values, values.shape[0], self.grid.n_t))

    @property
    def k_controls(self):
        return self.values.shape[0]


# -- control parametrizations u -> g(u) ---------------------------------------

class Parametrization:
    """Differentiable map ``g`` from optimization variable to physical control."""

    def __call__(self, u):
        raise NotImplementedError

    def d1(self, u):
        raise NotImplementedError

    def d2(self, u):
        raise NotImplementedError


class Identity(Parametrization):
    def __call__(self, u):
        return u

    def d1(self, u):
        return np.ones_like(u, dtype=float)

    def d2(self, u):
        return np.zeros_like(u, dtype=float)

    def __repr__(self):
        return "Identity()"


@dataclass(frozen=True)
class Affine(Parametrization):
    """``g(u) = scale * u + offset``."""

    scale: float = 1.0
    offset: float = 0.0

    def __call__(self, u):
        return self.scale * np.asarray(u, dtype=float) + self.offset

    def d1(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.scale)

    def d2(self, u):
        return np.zeros_like(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class BoundedSigmoid(Parametrization):
    """Logistic map of the real line onto the open interval ``(lo, hi)``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidInputError("BoundedSigmoid needs lo < hi")

    def _s(self, u):
        return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=float)))

    def __call__(self, u):
        return self.lo + (self.hi - self.lo) * self._s(u)

    def d1(self, u):
        s = self._s(u)
        return (self.hi - self.lo) * s * (1.0 - s)

    def d2(self, u):
        s = self._s(u)
        return (self.hi - self.lo) * s * (1.0 - s) * (1.0 - 2.0 * s)


# -- control terms -------------------------------------------------------------

def _is_diagonal(m):
    return not np.any(m - np.diag(np.diagonal(m)))


class ControlTerm:
    """Base class of a control Hamiltonian ``Hc(u)``.

    Subclasses provide ``value``, ``d1`` and ``d2`` for scalar ``u``; those
    carrying a diagonal flag also provide vectorized ``diag_*`` methods that
    take an array of control values and return one diagonal per value.
    """

    bilinear = False
    diagonal = False

    def value(self, u):
        raise NotImplementedError

    def d1(self, u):
        raise NotImplementedError

    def d2(self, u):
        raise NotImplementedError

    def diag_value(self, u):
        return np.array([np.diagonal(self.value(x)).real for x in np.ravel(u)])

    def diag_d1(self, u):
        return np.array([np.diagonal(self.d1(x)).real for x in np.ravel(u)])

    def diag_d2(self, u):
        return np.array([np.diagonal(self.d2(x)).real for x in np.ravel(u)])


class LinearControl(ControlTerm):
    """``Hc(u) = g(u) * M`` for a fixed Hermitian operator ``M``.

    Bilinear when ``g`` is the identity. ``diagonal`` is set when ``M`` has
    exactly zero off-diagonal entries.
    """

    def __init__(self, operator, param=None):
        self.operator = check_hermitian(operator, "control operator").copy()
        self.operator.setflags(write=False)
        self.param = Identity() if param is None else param
        self.bilinear = isinstance(self.param, Identity)
        self.diagonal = _is_diagonal(self.operator)
        self._diag = np.diagonal(self.operator).real.copy()

    def value(self, u):
        return float(self.param(u)) * self.operator

    def d1(self, u):
        return float(self.param.d1(u)) * self.operator

    def d2(self, u):
        return float(self.param.d2(u)) * self.operator

    def diag_value(self, u):
        return np.multiply.outer(self.param(np.ravel(u)), self._diag)

    def diag_d1(self, u):
        return np.multiply.outer(self.param.d1(np.ravel(u)), self._diag)

    def diag_d2(self, u):
        return np.multiply.outer(self.param.d2(np.ravel(u)), self._diag)

    def transformed(self, r):
        """The same control in the basis given by the columns of unitary `r`."""
        m = r.conj().T @ self.operator @ r
        m = 0.5 * (m + m.conj().T)
        return LinearControl(m, self.param)

    def __repr__(self):
        return f"LinearControl(dim={self.operator.shape[0]}, param={self.param!r})"


class FunctionControl(ControlTerm):
    """Control term given by callables for ``Hc``, ``dHc/du`` and ``d2Hc/du2``."""

    def __init__(self, value, d1, d2, diagonal=False):
        self._value, self._d1, self._d2 = value, d1, d2
        self.diagonal = bool(diagonal)

    def value(self, u):
        return np.asarray(self._value(u), dtype=complex)

    def d1(self, u):
        return np.asarray(self._d1(u), dtype=complex)

    def d2(self, u):
        return np.asarray(self._d2(u), dtype=complex)


class DiagonalizedControl(ControlTerm):
    """A general control term viewed in a fixed basis, keeping only the
    diagonal (the off-diagonal part is verified to vanish beforehand)."""

    diagonal = True

    def __init__(self, base, r):
        self.base = base
        self.r = r
        self.bilinear = base.bilinear

    def _rotate(self, m):
        return np.diag(np.diagonal(self.r.conj().T @ m @ self.r).real).astype(complex)

    def value(self, u):
        return self._rotate(self.base.value(u))

    def d1(self, u):
        return self._rotate(self.base.d1(u))

    def d2(self, u):
        return self._rotate(self.base.d2(u))


@dataclass(frozen=True)
class HamiltonianModel:
    """Constant drift plus a tuple of control terms.

    ``basis_transform`` records the unitary whose columns define the basis the
    model is expressed in, relative to the basis it was built in (``None``
    when untouched).
    """

    drift: np.ndarray
    controls: tuple
    basis_transform: Optional[np.ndarray] = None
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        drift = check_hermitian(self.drift, "drift").copy()
        drift.setflags(write=False)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "controls", tuple(self.controls))
        if not self.controls:
            raise InvalidInputError("a model needs at least one control term")

    @property
    def dim(self):
        return self.drift.shape[0]

    @property
    def n_controls(self):
        return len(self.controls)

    @property
    def diagonal(self):
        """True when every control term is diagonal."""
        return all(c.diagonal for c in self.controls)

    @property
    def bilinear(self):
        return all(c.bilinear for c in self.controls)


def _as_control_values(model, u):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (model.n_controls,):
        raise InvalidInputError(f"expected {model.n_controls} control values, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("control values must be finite")
    return u


def build_hamiltonian(model, u):
    """``H = H_drift + sum_k Hc_k(u_k)`` for one time point."""
    u = _as_control_values(model, u)
    h = model.drift.astype(complex)
    for term, x in zip(model.controls, u):
        h = h + term.value(x)
    return h


def control_derivative(model, u, k):
    """``dH/du_k`` at control values `u`."""
    u = _as_control_values(model, u)
    return model.controls[k].d1(u[k])


# -- basis changes ----------------------------------------------------------------

def _check_diagonalizes(r, matrices, what):
    for m in matrices:
        rotated = r.conj().T @ m @ r
        off = rotated - np.diag(np.diagonal(rotated))
        if np.max(np.abs(off), initial=0.0) > COMMUTE_ATOL:
            raise UnsupportedModelError(
                f"{what}: control eigenvectors depend on the control value"
            )


def _common_eigenbasis(terms):
    """Unitary diagonalizing every term in a commuting set of controls."""
    weights = np.sqrt(np.arange(2, len(terms) + 2, dtype=float))
    probe = sum(w * t.value(1.0) for w, t in zip(weights, terms))
    _, r = herm_eig(probe)
    samples = []
    for t in terms:
        samples += [t.value(1.0), t.value(2.5), t.d1(1.0)]
    _check_diagonalizes(r, samples, "control_diagonalize")
    return r


def control_diagonalize(model):
    """Rotate `model` into a basis where all of its controls are diagonal.

    Returns ``(model_t, r)``: ``model_t`` has drift ``r^† H_d r`` and diagonal
    control terms. States must be mapped with ``r^†`` by the caller (see
    :func:`transform_state`). When the controls are already diagonal the
    model is returned unchanged with ``r = I``.

    Raises
    ------
    UnsupportedModelError
        If the controls do not commute or their eigenvectors change with
        the control value.
    """
    if model.diagonal:
        return model, np.eye(model.dim, dtype=complex)
    sets = group_commuting_sets(model)
    if len(sets.groups) != 1:
        raise UnsupportedModelError("control_diagonalize needs a single commuting set of controls")
    r = sets.transforms[0]
    drift = r.conj().T @ model.drift @ r
    drift = 0.5 * (drift + drift.conj().T)
    controls = []
    for term in model.controls:
        if isinstance(term, LinearControl):
            rotated = term.transformed(r)
            d = np.diag(np.diagonal(rotated.operator).real).astype(complex)
            controls.append(LinearControl(d, term.param))
        else:
            controls.append(DiagonalizedControl(term, r))
    previous = model.basis_transform
    total = r if previous is None else previous @ r
    return HamiltonianModel(drift, tuple(controls), total, name=model.name), r


def transform_state(psi, r):
    """Map a state into the basis whose columns are `r`."""
    return np.asarray(r).conj().T @ np.asarray(psi, dtype=complex)


@dataclass(frozen=True)
class CommutingSetSpec:
    """Partition of control indices into mutually commuting groups.

    ``transforms[q]`` is a unitary whose columns simultaneously diagonalize
    every control in ``groups[q]``.
    """

    groups: tuple
    transforms: tuple

    @property
    def n_sets(self):
        return len(self.groups)


def group_commuting_sets(model):
    """Greedy partition of controls into commuting groups.

    Each control joins the first group all of whose members commute with it
    (commutator max-norm below 1e-10, tested on ``dHc/du`` at ``u = 1``);
    otherwise it opens a new group.
    """
    derivs = [term.d1(1.0) for term in model.controls]
    groups = []
    for k, dk in enumerate(derivs):
        for group in groups:
            if all(np.max(np.abs(dk @ derivs[j] - derivs[j] @ dk)) <= COMMUTE_ATOL for j in group):
                group.append(k)
                break
        else:
            groups.append([k])
    transforms = []
    for group in groups:
        terms = [model.controls[k] for k in group]
        if all(t.diagonal for t in terms):
            transforms.append(np.eye(model.dim, dtype=complex))
        else:
            transforms.append(_common_eigenbasis(terms))
    return CommutingSetSpec(tuple(tuple(g) for g in groups), tuple(transforms))


# -- benchmark problems ---------------------------------------------------------------

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class Problem(NamedTuple):
    model: HamiltonianModel
    psi0: np.ndarray
    psi_target: np.ndarray
    grid: TimeGrid


LZ_DEFAULTS = {"T": 1.01 * math.pi, "dt": 0.075}
TRANSMON_DEFAULTS = {"T": 2.83, "dt": 0.025, "kappa": -1.0, "levels": 3}
TRANSMON_REQUIRED = ("Delta", "delta1", "delta2")
RANDOM_DEFAULTS = {"dim": 4, "n_t": 400, "dt": 0.05}


def _merge_params(kind, params, defaults, required=()):
    params = dict(params or {})
    unknown = set(params) - set(defaults) - set(required)
    if unknown:
        raise InvalidInputError(f"unknown {kind} parameter(s): {', '.join(sorted(unknown))}")
    missing = [key for key in required if key not in params]
    if missing:
        raise InvalidInputError(f"{kind} problem requires parameter(s): {', '.join(missing)}")
    merged = {**defaults, **params}
    return merged


def lz_model():
    """Landau-Zener model ``H = (sigma_x + u sigma_z) / 2``."""
    return HamiltonianModel(0.5 * SIGMA_X, (LinearControl(0.5 * SIGMA_Z),), name="lz")


def ladder(levels):
    """Truncated bosonic annihilation operator."""
    return np.diag(np.sqrt(np.arange(1, levels)), k=1).astype(complex)


def transmon_model(Delta, delta1, delta2, kappa=-1.0, levels=3):
    """Two coupled transmons with a drive on the first one.

    Drift ``Delta n1 + sum_j delta_j n_j (n_j - 1) / 2 + kappa (b1^† b2 + b1 b2^†)``
    and bilinear control ``u (b1^† + b1)``. Basis index of ``|j1 j2>`` is
    ``j1 * levels + j2``.
    """
    b = ladder(levels)
    eye = np.eye(levels)
    b1, b2 = np.kron(b, eye), np.kron(eye, b)
    n1, n2 = b1.conj().T @ b1, b2.conj().T @ b2
    ident = np.eye(levels * levels)
    drift = (Delta * n1
             + 0.5 * delta1 * n1 @ (n1 - ident)
             + 0.5 * delta2 * n2 @ (n2 - ident)
             + kappa * (b1.conj().T @ b2 + b1 @ b2.conj().T))
    control = LinearControl(b1.conj().T + b1)
    return HamiltonianModel(drift, (control,), name="transmon")


def basis_state(index, dim):
    psi = np.zeros(dim, dtype=complex)
    psi[index] = 1.0
    return psi


def random_model(dim, rng):
    """Random Hermitian drift (normalized GUE) with a diagonal bilinear control."""
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    drift = (g + g.conj().T) / (2.0 * math.sqrt(2.0 * dim))
    control = np.diag(rng.standard_normal(dim)).astype(complex)
    return HamiltonianModel(drift, (LinearControl(control),), name="random")


def random_state(dim, rng):
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return psi / np.linalg.norm(psi)


def make_problem(kind, params=None, seed=0):
    """Construct a benchmark problem.

    Parameters
    ----------
    kind : {"lz", "transmon", "random"}
    params : dict, optional
        ``lz``: ``T``, ``dt``. ``transmon``: ``Delta``, ``delta1``,
        ``delta2`` (required), ``kappa``, ``levels``, ``T``, ``dt``.
        ``random``: ``dim``, ``n_t``, ``dt``.
    seed : int
        Seed for the ``random`` kind (ignored otherwise).

    Returns
    -------
    Problem
        ``(model, psi0, psi_target, grid)``; grids span ``T`` exactly with a
        step no larger than the requested ``dt``.
    """
    if kind == "lz":
        p = _merge_params(kind, params, LZ_DEFAULTS)
        return Problem(lz_model(), basis_state(0, 2), basis_state(1, 2),
                       TimeGrid.from_duration(p["T"], p["dt"]))
    if kind == "transmon":
        p = _merge_params(kind, params, TRANSMON_DEFAULTS, TRANSMON_REQUIRED)
        levels = int(p["levels"])
        if levels < 2:
            raise InvalidInputError("transmon needs at least 2 levels")
        model = transmon_model(p["Delta"], p["delta1"], p["delta2"], p["kappa"], levels)
        dim = levels * levels
        return Problem(model, basis_state(levels * 1 + 0, dim), basis_state(levels * 1 + 1, dim),
                       TimeGrid.from_duration(p["T"], p["dt"]))
    if kind == "random":
        p = _merge_params(kind, params, RANDOM_DEFAULTS)
        dim = int(p["dim"])
        if dim < 1 or int(p["n_t"]) < 2:
            raise InvalidInputError("random problem needs dim >= 1 and n_t >= 2")
        rng = np.random.default_rng(seed)
        model = random_model(dim, rng)
        return Problem(model, random_state(dim, rng), random_state(dim, rng),
                       TimeGrid(float(p["dt"]), int(p["n_t"])))
    raise InvalidInputError(f"unknown problem kind {kind!r}")


def diagonalized_problem(problem):
    """Control-diagonal version of `problem` (states rotated along)."""
    model, r = control_diagonalize(problem.model)
    return Problem(model, transform_state(problem.psi0, r),
                   transform_state(problem.psi_target, r), problem.grid)


def check_problem_states(model, psi0, psi_target):
    return check_state(psi0, model.dim, "psi0"), check_state(psi_target, model.dim, "psi_target")


__all__ = [
    "TimeGrid", "ControlVector", "Parametrization", "Identity", "Affine", "BoundedSigmoid",
    "ControlTerm", "LinearControl", "FunctionControl", "DiagonalizedControl",
    "HamiltonianModel", "build_hamiltonian", "control_derivative", "control_diagonalize",
    "transform_state", "CommutingSetSpec", "group_commuting_sets", "Problem", "make_problem",
    "diagonalized_problem", "lz_model", "transmon_model", "random_model", "ladder",
    "SIGMA_X", "SIGMA_Y", "SIGMA_Z", "check_square_matrix",
]

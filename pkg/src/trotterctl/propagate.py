"""Piecewise-constant time evolution.

Four step propagators are provided. ``Ex2`` and ``Ex1`` exponentiate the full
Hamiltonian at the left point or the trapezoid average of each interval.
``ST2`` and ``ST1`` split every step symmetrically into two control
half-steps around a drift step; they require a control-diagonal model, so
the control half-steps are element-wise phase multiplications and the drift
exponential is computed once.
"""
import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_control, check_positive, check_state
from .exceptions import InvalidInputError, InvalidStateError, UnsupportedModelError
from .model import ControlVector, build_hamiltonian
from .numerics import matexp

EXPM_TOL = 1e-15


class Scheme(str, enum.Enum):
    EX1 = "Ex1"
    EX2 = "Ex2"
    ST1 = "ST1"
    ST2 = "ST2"

    @property
    def quadrature(self):
        return "trapezoid" if self in (Scheme.EX1, Scheme.ST1) else "rectangle"

    @property
    def trotter(self):
        return self in (Scheme.ST1, Scheme.ST2)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise InvalidInputError(f"unknown scheme {value!r}; expected one of Ex1, Ex2, ST1, ST2")

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class DriftCache:
    """Drift exponential ``exp(-i H_d dt)`` shared by all steps of a grid."""

    scheme: Scheme
    dt: float
    ud: np.ndarray


def precompute_drift_cache(model, grid, scheme):
    """Exponentiate the (constant) drift once for step size ``grid.dt``."""
    scheme = Scheme.parse(scheme)
    dt = grid.dt if hasattr(grid, "dt") else check_positive(grid, "dt")
    ud = matexp(-1j * dt * model.drift, tol=EXPM_TOL)
    ud.setflags(write=False)
    return DriftCache(scheme, float(dt), ud)


@dataclass
class Trajectory:
    """Forward states ``psi[n]`` and backward states ``chi[n]``, ``n = 0..n_t-1``.

    ``propagators`` holds the dense step matrices of the exact schemes and
    ``half_phases`` the element-wise control half-steps of the Trotter ones.
    """

    scheme: Scheme
    u: np.ndarray
    dt: float
    psi: np.ndarray
    chi: np.ndarray
    overlap: complex
    propagators: Optional[np.ndarray] = None
    half_phases: Optional[np.ndarray] = None
    ud: Optional[np.ndarray] = None

    @property
    def n_t(self):
        return self.psi.shape[0]

    def step_forward(self, n, v):
        """Apply step ``n`` (from ``t_n`` to ``t_{n+1}``) to vector `v`."""
        if self.propagators is not None:
            return self.propagators[n] @ v
        return self.half_phases[_leading(self.scheme, n)] * (self.ud @ (self.half_phases[n] * v))

    def step_adjoint(self, n, v):
        """Apply the adjoint of step ``n`` to `v`."""
        if self.propagators is not None:
            return self.propagators[n].conj().T @ v
        v = self.half_phases[_leading(self.scheme, n)].conj() * v
        return self.half_phases[n].conj() * (self.ud.conj().T @ v)


def _leading(scheme, n):
    return n + 1 if scheme is Scheme.ST1 else n


def _values(u, model, n_t=None):
    if isinstance(u, ControlVector):
        u = u.values
    return check_control(u, model.n_controls, n_t)


def control_diagonals(model, u, order=0):
    """Diagonals of ``d^order Hc_k / du^order`` at every grid point.

    Returns an array of shape ``(K, n_t, D)``.
    """
    if not model.diagonal:
        raise UnsupportedModelError("Trotter schemes need a control-diagonal model; "
                                    "apply control_diagonalize first")
    u = _values(u, model)
    method = ("diag_value", "diag_d1", "diag_d2")[order]
    return np.stack([getattr(term, method)(u[k]) for k, term in enumerate(model.controls)])


def _hamiltonians(model, u):
    return np.stack([build_hamiltonian(model, u[:, n]) for n in range(u.shape[1])])


def _exact_propagators(scheme, model, u, dt):
    hs = _hamiltonians(model, u)
    if scheme is Scheme.EX1:
        hs = 0.5 * (hs[:-1] + hs[1:])
    else:
        hs = hs[:-1]
    return np.stack([matexp(-1j * dt * h, tol=EXPM_TOL) for h in hs])


def _half_phases(model, u, dt):
    hc = control_diagonals(model, u).sum(axis=0)
    return np.exp(-0.5j * dt * hc)


def _check_cache(cache, scheme, dt):
    if cache is None:
        raise InvalidStateError("Trotter schemes need a DriftCache")
    if not np.isclose(cache.dt, dt, rtol=1e-14, atol=0.0):
        raise InvalidStateError(f"drift cache built for dt={cache.dt!r}, step uses dt={dt!r}")


def propagate_step(scheme, model, cache, u_n, u_next, psi, dt):
    """Advance `psi` by one step of size `dt`.

    `u_n` and `u_next` are the control values (scalars for one control, else
    length-K vectors) at the left and right end of the interval; schemes
    using the rectangle rule ignore `u_next`.
    """
    scheme = Scheme.parse(scheme)
    dt = check_positive(dt, "dt")
    psi = check_state(psi, model.dim, "psi")
    u_n = np.atleast_1d(np.asarray(u_n, dtype=float))
    u_next = np.atleast_1d(np.asarray(u_next, dtype=float))
    if scheme is Scheme.EX2:
        return matexp(-1j * dt * build_hamiltonian(model, u_n), tol=EXPM_TOL) @ psi
    if scheme is Scheme.EX1:
        h = 0.5 * (build_hamiltonian(model, u_n) + build_hamiltonian(model, u_next))
        return matexp(-1j * dt * h, tol=EXPM_TOL) @ psi
    _check_cache(cache, scheme, dt)
    pair = np.stack([u_n, u_next], axis=1)
    v = _half_phases(model, pair, dt)
    lead = v[1] if scheme is Scheme.ST1 else v[0]
    return lead * (cache.ud @ (v[0] * psi))


def evolve(scheme, model, cache, u, psi0, psi_target, dt=None):
    """Forward and backward sweep over the whole grid.

    Parameters
    ----------
    scheme : Scheme or str
    model : HamiltonianModel
    cache : DriftCache or None
        Required for the Trotter schemes; its ``dt`` is used when `dt` is
        not given.
    u : ControlVector or array of shape (K, n_t)
    psi0, psi_target : state vectors

    Returns
    -------
    Trajectory
    """
    scheme = Scheme.parse(scheme)
    if dt is None:
        if isinstance(u, ControlVector):
            dt = u.grid.dt
        elif cache is not None:
            dt = cache.dt
        else:
            raise InvalidInputError("dt is required when neither a ControlVector nor a cache is given")
    dt = check_positive(dt, "dt")
    u = _values(u, model)
    psi0 = check_state(psi0, model.dim, "psi0")
    psi_target = check_state(psi_target, model.dim, "psi_target")
    n_t = u.shape[1]
    if n_t < 2:
        raise InvalidInputError("a trajectory needs at least two grid points")

    if scheme.trotter:
        _check_cache(cache, scheme, dt)
        traj = Trajectory(scheme, u, dt, None, None, 0j,
                          half_phases=_half_phases(model, u, dt), ud=cache.ud)
    else:
        traj = Trajectory(scheme, u, dt, None, None, 0j,
                          propagators=_exact_propagators(scheme, model, u, dt))

    psi = np.empty((n_t, model.dim), dtype=complex)
    chi = np.empty_like(psi)
    psi[0] = psi0
    for n in range(n_t - 1):
        psi[n + 1] = traj.step_forward(n, psi[n])
    chi[-1] = psi_target
    for n in range(n_t - 2, -1, -1):
        chi[n] = traj.step_adjoint(n, chi[n + 1])
    traj.psi, traj.chi = psi, chi
    traj.overlap = complex(np.vdot(chi[-1], psi[-1]))
    return traj


def overlap_fidelity(traj):
    """``(o, F, J_F)`` with ``F = |o|^2`` and ``J_F = (1 - F) / 2``."""
    o = complex(traj.overlap if hasattr(traj, "overlap") else traj)
    fidelity = abs(o) ** 2
    return o, fidelity, 0.5 * (1.0 - fidelity)


def multi_control_step(model, sets, cache, u_n, psi, dt):
    """One split step for controls grouped into commuting sets.

    Each half-step applies, set by set, ``R_q exp(-i dt/2 sum_k D_k) R_q^†``
    with ``D_k`` the control diagonal in the basis of ``R_q``; the same
    ordered product is used on both sides of the drift step.
    """
    dt = check_positive(dt, "dt")
    psi = check_state(psi, model.dim, "psi")
    u_n = np.atleast_1d(np.asarray(u_n, dtype=float))
    if u_n.shape != (model.n_controls,):
        raise InvalidInputError(f"expected {model.n_controls} control values")
    _check_cache(cache, Scheme.ST2, dt)
    transforms = getattr(sets, "transforms", None)
    if transforms is None or len(transforms) != len(sets.groups) or any(r is None for r in transforms):
        raise InvalidStateError("every commuting set needs a precomputed transform")

    factors = []
    for group, r in zip(sets.groups, transforms):
        diag = np.zeros(model.dim)
        for k in group:
            m = r.conj().T @ model.controls[k].value(u_n[k]) @ r
            diag += np.diagonal(m).real
        factors.append((r, np.exp(-0.5j * dt * diag)))

    def half(v):
        for r, phase in factors:
            v = r @ (phase * (r.conj().T @ v))
        return v

    return half(cache.ud @ half(psi))


__all__ = ["Scheme", "DriftCache", "Trajectory", "precompute_drift_cache", "propagate_step",
           "evolve", "overlap_fidelity", "multi_control_step", "control_diagonals"]

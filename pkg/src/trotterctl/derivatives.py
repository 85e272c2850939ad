"""Analytic first and second derivatives of the fidelity cost.

Gradients are returned with shape ``(K, n_t)``; Hessians with shape
``(K*n_t, K*n_t)`` where control ``k`` at grid point ``n`` has flat index
``k*n_t + n``. Parameters that never enter a scheme's dynamics (``u`` at the
last grid point under the rectangle rule) get exactly zero entries.

Every expression below is written for the overlap ``o = <chi_n|psi_n>``; the
cost derivatives then follow from ``J_F = (1 - |o|^2) / 2``:

    dJ/da       = -Re(conj(o) do/da)
    d2J/da db   = -Re(conj(do/db) do/da + conj(o) d2o/da db)
"""
import re
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_control, check_non_negative, check_positive
from .exceptions import InvalidInputError, InvalidStateError
from .model import build_hamiltonian
from .numerics import (EPS_MACH, _deriv_series, _series, _series_coefficients, kmax_for_tol,
                       matexp)
from .propagate import EXPM_TOL, Scheme, control_diagonals, evolve, overlap_fidelity

FD_EPS = EPS_MACH ** (1.0 / 3.0)
REL_FLOOR = 1e-12


@dataclass(frozen=True)
class GradientMethod:
    """Gradient flavour: ``ExSeries(kmax)``, ``ExAux``, ``ST1`` or ``ST2``.

    ``ExSeries`` with ``kmax=None`` picks the truncation per time step from
    the bound ``kmax_for_tol(dt, eps, norm=2*||H_n||)``.
    """

    tag: str
    kmax: Optional[int] = None

    def __post_init__(self):
        if self.tag not in ("ExSeries", "ExAux", "ST1", "ST2"):
            raise InvalidInputError(f"unknown gradient method {self.tag!r}")
        if self.kmax is not None:
            if self.tag != "ExSeries":
                raise InvalidInputError(f"{self.tag} takes no kmax")
            if int(self.kmax) != self.kmax or self.kmax < 0:
                raise InvalidInputError(f"kmax must be a non-negative integer, got {self.kmax!r}")

    _PATTERN = re.compile(r"^\s*(ExSeries|ExAux|ST1|ST2)\s*(?:\(\s*(\d+|auto)?\s*\))?\s*$",
                          re.IGNORECASE)

    @classmethod
    def parse(cls, value):
        """Parse labels such as ``"ST1"``, ``"ExAux"``, ``"ExSeries(9)"``."""
        if isinstance(value, cls):
            return value
        match = cls._PATTERN.match(str(value))
        if not match:
            raise InvalidInputError(f"cannot parse gradient method {value!r}")
        names = {"exseries": "ExSeries", "exaux": "ExAux", "st1": "ST1", "st2": "ST2"}
        tag = names[match.group(1).lower()]
        arg = match.group(2)
        if arg is not None and tag != "ExSeries":
            raise InvalidInputError(f"{tag} takes no argument")
        kmax = int(arg) if arg is not None and arg.lower() != "auto" else None
        return cls(tag, kmax)

    @property
    def scheme(self):
        """Propagation scheme whose landscape this gradient differentiates."""
        return {"ST1": Scheme.ST1, "ST2": Scheme.ST2}.get(self.tag, Scheme.EX2)

    @property
    def label(self):
        if self.tag == "ExSeries":
            return f"ExSeries({'auto' if self.kmax is None else self.kmax})"
        return self.tag

    def __str__(self):
        return self.label


@dataclass
class DerivativeReport:
    gradient: np.ndarray
    hessian: Optional[np.ndarray] = None
    fd_gradient: Optional[np.ndarray] = None
    fd_hessian: Optional[np.ndarray] = None
    max_rel_diff: float = float("nan")
    wall_time: float = 0.0


def relative_difference(analytic, reference, floor=REL_FLOOR):
    """Element-wise ``|a - r| / max(|r|, floor)``."""
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    return np.abs(analytic - reference) / np.maximum(np.abs(reference), floor)


def _require(traj, *schemes):
    if traj.scheme not in schemes:
        allowed = ", ".join(str(s) for s in schemes)
        raise InvalidStateError(f"trajectory was produced with {traj.scheme}, expected {allowed}")


def _controls(traj, u, model):
    return traj.u if u is None else check_control(u, model.n_controls, traj.n_t)


def _local_overlaps(traj):
    """``<chi_n|psi_n>`` for every n. All equal ``o`` mathematically; pairing
    each derivative with the overlap of its own time slice keeps gradient
    entries that are pure phase changes exactly zero in floating point."""
    return np.einsum("nd,nd->n", np.conj(traj.chi), traj.psi)


def _cost_gradient(o, do):
    return -np.real(np.conj(o) * do)


def _cost_hessian(o, do, d2o_lower):
    """Mirror a lower-filled complex ``d2o`` and assemble the cost Hessian."""
    flat = do.reshape(-1)
    d2o = np.tril(d2o_lower) + np.tril(d2o_lower, -1).T
    hess = -np.real(np.outer(flat, np.conj(flat)) + np.conj(o) * d2o)
    lower = np.tril(hess)
    return lower + np.tril(lower, -1).T


# -- exact propagator (Ex2) --------------------------------------------------------

def _adaptive_kmax(h, dt):
    return kmax_for_tol(dt, EPS_MACH, norm=max(1.0, 2.0 * np.linalg.norm(h, 2)))


def commutator_tails(model, u, dt, kmax=None):
    """Series matrices ``S[k, n]`` for every control and step.

    This is the extra work an exact-propagator gradient does on top of the
    propagation itself. Returns an array of shape ``(K, n_t - 1, D, D)``.
    """
    u = check_control(u, model.n_controls)
    dt = check_positive(dt, "dt")
    n_steps = u.shape[1] - 1
    tails = np.empty((model.n_controls, n_steps, model.dim, model.dim), dtype=complex)
    fixed = None if kmax is None else _series_coefficients(dt, kmax)
    for n in range(n_steps):
        h = build_hamiltonian(model, u[:, n])
        coeffs = fixed or _series_coefficients(dt, _adaptive_kmax(h, dt))
        for k, term in enumerate(model.controls):
            tails[k, n] = _series(h, term.d1(u[k, n]), coeffs)
    return tails


def grad_ex_series(model, traj, u=None, kmax=9):
    """Gradient of the exact-propagator landscape via the commutator series.

    ``dJ/du_n = Re(i conj(o) <chi_n|S_n|psi_n>) dt``; ``kmax=0`` gives the
    familiar first-order approximation ``S_n = dH/du``. ``kmax=None`` picks
    the truncation per step (see :class:`GradientMethod`).
    """
    _require(traj, Scheme.EX2)
    u = _controls(traj, u, model)
    tails = commutator_tails(model, u, traj.dt, kmax)
    do = np.zeros((model.n_controls, traj.n_t), dtype=complex)
    s_psi = np.einsum("kndf,nf->knd", tails, traj.psi[:-1])
    do[:, :-1] = -1j * traj.dt * np.einsum("nd,knd->kn", np.conj(traj.chi[:-1]), s_psi)
    return _cost_gradient(_local_overlaps(traj), do)


def aux_propagator_derivative(h, dh, dt):
    """``dU/du`` for ``U = exp(-i H dt)`` from a 2x2 block matrix exponential.

    Returns ``(U, dU)``: the diagonal and top-right blocks of
    ``exp(-i dt [[H, dH], [0, H]])``.
    """
    dim = h.shape[0]
    block = np.zeros((2 * dim, 2 * dim), dtype=complex)
    block[:dim, :dim] = h
    block[dim:, dim:] = h
    block[:dim, dim:] = dh
    e = matexp(-1j * dt * block, tol=EXPM_TOL)
    return e[:dim, :dim], e[:dim, dim:]


def grad_aux(model, traj, u=None):
    """Exact gradient through the auxiliary block-matrix exponential.

    ``dJ/du_n = -Re(conj(o) <chi_{n+1}|dU_n/du_n|psi_n>)``.
    """
    _require(traj, Scheme.EX2)
    u = _controls(traj, u, model)
    do = np.zeros((model.n_controls, traj.n_t), dtype=complex)
    for n in range(traj.n_t - 1):
        h = build_hamiltonian(model, u[:, n])
        for k, term in enumerate(model.controls):
            _, du = aux_propagator_derivative(h, term.d1(u[k, n]), traj.dt)
            do[k, n] = np.vdot(traj.chi[n + 1], du @ traj.psi[n])
    return _cost_gradient(_local_overlaps(traj), do)


def hess_ex(model, traj, u=None, kmax=9):
    """Hessian of the exact-propagator landscape.

    Off-diagonal blocks contract the bra ``S_n^† chi_n`` backward through the
    stored step propagators one row at a time; diagonal blocks use the
    control derivative of the commutator series.
    """
    _require(traj, Scheme.EX2)
    u = _controls(traj, u, model)
    n_k, n_t, dim, dt = model.n_controls, traj.n_t, model.dim, traj.dt
    tails = commutator_tails(model, u, dt, kmax)
    s_psi = np.einsum("kndf,nf->knd", tails, traj.psi[:-1])
    do = np.zeros((n_k, n_t), dtype=complex)
    do[:, :-1] = -1j * dt * np.einsum("nd,knd->kn", np.conj(traj.chi[:-1]), s_psi)

    d2o = np.zeros((n_k * n_t, n_k * n_t), dtype=complex)
    zero = np.zeros((dim, dim), dtype=complex)
    for n in range(n_t - 1):
        h = build_hamiltonian(model, u[:, n])
        coeffs = _series_coefficients(dt, _adaptive_kmax(h, dt) if kmax is None else kmax)
        d1 = [term.d1(u[k, n]) for k, term in enumerate(model.controls)]
        for k, term in enumerate(model.controls):
            row = k * n_t + n
            s_chi_l = [tails[l, n].conj().T @ traj.chi[n] for l in range(n_k)]
            for l in range(k + 1):
                d2 = term.d2(u[k, n]) if l == k else zero
                ds = _deriv_series(h, d1[k], d2, d1[l], coeffs)
                d2o[row, l * n_t + n] = (-dt * dt * np.vdot(s_chi_l[l], s_psi[k, n])
                                         - 1j * dt * np.vdot(traj.chi[n], ds @ traj.psi[n]))
            b = s_chi_l[k]
            for m in range(n - 1, -1, -1):
                b = traj.step_adjoint(m, b)
                for l in range(n_k):
                    d2o[row, l * n_t + m] = -dt * dt * np.vdot(b, s_psi[l, m])
    return _cost_hessian(traj.overlap, do, _to_lower(d2o, n_k, n_t))


def _to_lower(d2o, n_k, n_t):
    """Each pair ``(k, n), (l, m)`` is filled once from the row with the later
    time; fold entries that landed above the diagonal into the lower triangle."""
    return np.tril(d2o) + np.triu(d2o, 1).T


# -- Trotter schemes ------------------------------------------------------------------

def _st1_weights(n_t, dt):
    w = np.full(n_t, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def grad_st1(model, traj, u=None):
    """Gradient of the ST1 landscape.

    ``dJ/du_n = Re(i conj(o) <chi_n|dHc/du|psi_n>) w_n`` with ``w_n = dt``
    in the interior and ``dt/2`` at both ends.
    """
    _require(traj, Scheme.ST1)
    u = _controls(traj, u, model)
    d1 = control_diagonals(model, u, 1)
    w = _st1_weights(traj.n_t, traj.dt)
    do = -1j * w * np.einsum("nd,knd,nd->kn", np.conj(traj.chi), d1, traj.psi)
    return _cost_gradient(_local_overlaps(traj), do)


def grad_st2(model, traj, u=None):
    """Gradient of the ST2 landscape; the entry at the last grid point is 0.

    Each ``u_n`` sits in both half-steps of step ``n``, giving
    ``dJ/du_n = Re(i conj(o)/2 [<chi_n|h'|psi_n> + <chi_{n+1}|h'|psi_{n+1}>]) dt``.
    """
    _require(traj, Scheme.ST2)
    u = _controls(traj, u, model)
    d1 = control_diagonals(model, u, 1)[:, :-1]
    chi, psi = np.conj(traj.chi), traj.psi
    o = np.conj(_local_overlaps(traj))
    inner = (o[:-1] * np.einsum("nd,knd,nd->kn", chi[:-1], d1, psi[:-1])
             + o[1:] * np.einsum("nd,knd,nd->kn", chi[1:], d1, psi[1:]))
    grad = np.zeros((model.n_controls, traj.n_t))
    grad[:, :-1] = -np.real(-0.5j * traj.dt * inner)
    return grad


def hess_st1(model, traj, u=None):
    """Hessian of the ST1 landscape.

    Interior points act like a full control step ``exp(-i Hc dt)`` and the two
    end points like a half step, so the end rows and columns carry the
    half weight and the corners a quarter.
    """
    _require(traj, Scheme.ST1)
    u = _controls(traj, u, model)
    n_k, n_t = model.n_controls, traj.n_t
    d1 = control_diagonals(model, u, 1)
    d2 = control_diagonals(model, u, 2)
    w = _st1_weights(n_t, traj.dt)
    chi, psi = traj.chi, traj.psi
    h_psi = d1 * psi[np.newaxis]
    do = -1j * w * np.einsum("nd,knd->kn", np.conj(chi), h_psi)

    d2o = np.zeros((n_k * n_t, n_k * n_t), dtype=complex)
    for n in range(n_t):
        for k in range(n_k):
            row = k * n_t + n
            for l in range(k + 1):
                op = -1j * w[n] * d1[k, n] * d1[l, n]
                if l == k:
                    op = op + d2[k, n]
                d2o[row, l * n_t + n] = -1j * w[n] * np.vdot(chi[n], op * psi[n])
            b = w[n] * d1[k, n] * chi[n]
            for m in range(n - 1, -1, -1):
                b = traj.step_adjoint(m, b)
                for l in range(n_k):
                    d2o[row, l * n_t + m] = -w[m] * np.vdot(b, h_psi[l, m])
    return _cost_hessian(traj.overlap, do, _to_lower(d2o, n_k, n_t))


def hess_st2(model, traj, u=None):
    """Hessian of the ST2 landscape; row and column of the last point are 0."""
    _require(traj, Scheme.ST2)
    u = _controls(traj, u, model)
    n_k, n_t, dt = model.n_controls, traj.n_t, traj.dt
    d1 = control_diagonals(model, u, 1)
    d2 = control_diagonals(model, u, 2)
    chi, psi = traj.chi, traj.psi
    half = -0.5j * dt
    do = np.zeros((n_k, n_t), dtype=complex)
    for n in range(n_t - 1):
        for k in range(n_k):
            do[k, n] = half * (np.vdot(chi[n], d1[k, n] * psi[n])
                               + np.vdot(chi[n + 1], d1[k, n] * psi[n + 1]))

    d2o = np.zeros((n_k * n_t, n_k * n_t), dtype=complex)
    for n in range(n_t - 1):
        for k in range(n_k):
            row = k * n_t + n
            for l in range(k + 1):
                same = 0j
                for j in (n, n + 1):
                    op = half * d1[k, n] * d1[l, n]
                    if l == k:
                        op = op + d2[k, n]
                    same += np.vdot(chi[j], op * psi[j])
                cross = (np.vdot(chi[n + 1], d1[k, n] * traj.step_forward(n, d1[l, n] * psi[n]))
                         + np.vdot(chi[n + 1], d1[l, n] * traj.step_forward(n, d1[k, n] * psi[n])))
                d2o[row, l * n_t + n] = half * same + half * half * cross
            # beta(j) is the ket whose bra sums both insertion points of u_n,
            # carried back to time j.
            upper = traj.step_adjoint(n, d1[k, n] * chi[n + 1]) + d1[k, n] * chi[n]
            for m in range(n - 1, -1, -1):
                lower = traj.step_adjoint(m, upper)
                for l in range(n_k):
                    d2o[row, l * n_t + m] = half * half * (np.vdot(lower, d1[l, m] * psi[m])
                                                           + np.vdot(upper, d1[l, m] * psi[m + 1]))
                upper = lower
    return _cost_hessian(traj.overlap, do, _to_lower(d2o, n_k, n_t))


# -- dispatch --------------------------------------------------------------------------

def fidelity_gradient(method, model, traj, u=None):
    method = GradientMethod.parse(method)
    if method.tag == "ST1":
        return grad_st1(model, traj, u)
    if method.tag == "ST2":
        return grad_st2(model, traj, u)
    if method.tag == "ExAux":
        return grad_aux(model, traj, u)
    return grad_ex_series(model, traj, u, method.kmax)


def fidelity_hessian(method, model, traj, u=None):
    method = GradientMethod.parse(method)
    if method.tag == "ST1":
        return hess_st1(model, traj, u)
    if method.tag == "ST2":
        return hess_st2(model, traj, u)
    kmax = method.kmax
    if method.tag == "ExAux":
        kmax = None
    return hess_ex(model, traj, u, kmax)


def fidelity_cost(scheme, model, cache, u, psi0, psi_target, dt):
    """``J_F`` of control `u` under `scheme` (no derivatives)."""
    traj = evolve(scheme, model, cache, u, psi0, psi_target, dt)
    return overlap_fidelity(traj)[2]


# -- regularization --------------------------------------------------------------------

def reg_amplitude(u, alpha, dt):
    """``J = alpha/2 dt sum u^2``; returns ``(J, grad, hessian_diagonal)``."""
    u = np.asarray(getattr(u, "values", u), dtype=float)
    alpha = check_non_negative(alpha, "alpha")
    dt = check_positive(dt, "dt")
    cost = 0.5 * alpha * dt * float(np.sum(u * u))
    return cost, alpha * dt * u, np.full(u.shape, alpha * dt)


def derivative_stencil(n_t):
    """Matrix ``D`` of scaled first differences: second-order one-sided rows
    at both ends and centered rows in the bulk (each row is ``2 dt u'``)."""
    if int(n_t) != n_t or n_t < 5:
        raise InvalidInputError(f"smoothness regularization needs n_t >= 5, got {n_t!r}")
    n_t = int(n_t)
    d = np.zeros((n_t, n_t))
    d[0, :3] = (-3.0, 4.0, -1.0)
    for i in range(1, n_t - 1):
        d[i, i - 1], d[i, i + 1] = -1.0, 1.0
    d[-1, -3:] = (1.0, -4.0, 3.0)
    return d


def reg_smoothness(u, gamma, dt):
    """Penalty on the discrete time derivative of each control row.

    ``J = gamma/(8 dt) ||D u||^2 = gamma/2 dt sum (u')^2`` with ``D`` from
    :func:`derivative_stencil`. Returns ``(J, grad, hessian)`` where the
    Hessian is block-diagonal over controls in flat ``k*n_t + n`` order.
    """
    u = np.asarray(getattr(u, "values", u), dtype=float)
    squeeze = u.ndim == 1
    u2 = np.atleast_2d(u)
    gamma = check_non_negative(gamma, "gamma")
    dt = check_positive(dt, "dt")
    d = derivative_stencil(u2.shape[1])
    du = u2 @ d.T
    scale = gamma / (4.0 * dt)
    cost = 0.5 * scale * float(np.sum(du * du))
    dtd = d.T @ d
    grad = scale * (u2 @ dtd)
    hess = np.kron(np.eye(u2.shape[0]), scale * dtd)
    return cost, (grad[0] if squeeze else grad), hess


# -- finite differences -------------------------------------------------------------

def fd_gradient(costfn, u, eps=FD_EPS):
    """Central finite-difference gradient of a scalar function of an array."""
    u = np.asarray(u, dtype=float)
    eps = check_positive(eps, "eps")
    grad = np.empty(u.shape)
    flat = grad.reshape(-1)
    for i in range(u.size):
        up = u.copy().reshape(-1)
        down = u.copy().reshape(-1)
        up[i] += eps
        down[i] -= eps
        # divide by the step actually taken, not the nominal 2*eps
        flat[i] = (costfn(up.reshape(u.shape)) - costfn(down.reshape(u.shape))) / (up[i] - down[i])
    return grad


def fd_hessian(gradfn, u, eps=FD_EPS):
    """Central differences of an analytic gradient, symmetrized."""
    u = np.asarray(u, dtype=float)
    columns = fd_gradient_columns(gradfn, u, eps)
    return 0.5 * (columns + columns.T)


def fd_gradient_columns(gradfn, u, eps=FD_EPS):
    eps = check_positive(eps, "eps")
    size = u.size
    out = np.empty((size, size))
    for i in range(size):
        up = u.copy().reshape(-1)
        down = u.copy().reshape(-1)
        up[i] += eps
        down[i] -= eps
        g_up = np.asarray(gradfn(up.reshape(u.shape)), dtype=float).reshape(-1)
        g_down = np.asarray(gradfn(down.reshape(u.shape)), dtype=float).reshape(-1)
        out[:, i] = (g_up - g_down) / (up[i] - down[i])
    return out


def finite_difference_check(costfn, u, eps=FD_EPS, gradfn=None, hessfn=None):
    """Compare analytic derivatives with central finite differences.

    Parameters
    ----------
    costfn : callable
        ``u -> J``.
    u : array_like
        Point of evaluation.
    eps : float
        Perturbation, default ``eps_mach**(1/3)``.
    gradfn : callable, optional
        ``u -> grad``; compared with central differences of `costfn`.
    hessfn : callable, optional
        ``u -> hessian``; compared with central differences of `gradfn`.

    Returns
    -------
    DerivativeReport
        ``max_rel_diff`` is the largest ``|analytic - fd| / max(|fd|, 1e-12)``
        over all compared elements.
    """
    u = np.asarray(getattr(u, "values", u), dtype=float)
    start = time.perf_counter()
    if gradfn is None:
        grad = fd_gradient(costfn, u, eps)
        return DerivativeReport(grad, fd_gradient=grad, max_rel_diff=0.0,
                                wall_time=time.perf_counter() - start)
    grad = np.asarray(gradfn(u), dtype=float)
    fd_grad = fd_gradient(costfn, u, eps)
    worst = float(np.max(relative_difference(grad, fd_grad)))
    hess = fd_hess = None
    if hessfn is not None:
        hess = np.asarray(hessfn(u), dtype=float)
        fd_hess = fd_gradient_columns(gradfn, u, eps)
        worst = max(worst, float(np.max(relative_difference(hess, fd_hess))))
    return DerivativeReport(grad, hess, fd_grad, fd_hess, worst, time.perf_counter() - start)


__all__ = [
    "GradientMethod", "DerivativeReport", "kmax_for_tol", "relative_difference",
    "commutator_tails", "grad_ex_series", "aux_propagator_derivative", "grad_aux",
    "grad_st1", "grad_st2", "hess_ex", "hess_st1", "hess_st2", "fidelity_gradient",
    "fidelity_hessian", "fidelity_cost", "reg_amplitude", "reg_smoothness",
    "derivative_stencil", "fd_gradient", "fd_gradient_columns", "fd_hessian",
    "finite_difference_check",
]

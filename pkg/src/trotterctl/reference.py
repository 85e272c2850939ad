"""Extended-precision reference landscapes.

Independent of the double-precision propagators: states are evolved with
mpmath's matrix exponential at 40 significant digits. Central differences
of this landscape are free of the ~1e-16 cost rounding that swamps
double-precision differences at small entries, and at entries which vanish
exactly (for example controls acting only as a global phase on an
eigenstate). Only bilinear models (``Hc = sum_k u_k M_k`` with identity
parametrization) are supported; intended for D <= 4.

Differences are evaluated locally: perturbing ``u_n`` changes only the
steps that read it, so each perturbed cost reuses the unperturbed forward
states and backward covectors and recomputes one or two steps.
"""
import mpmath
import numpy as np

from .exceptions import UnsupportedModelError

DPS = 40
FD_EPS = float(np.finfo(float).eps) ** (1.0 / 3.0)
SCHEMES = ("Ex1", "Ex2", "ST1", "ST2")


def _mp(a):
    a = np.asarray(a, dtype=complex)
    return mpmath.matrix([[mpmath.mpc(x.real, x.imag) for x in row] for row in a])


class ReferenceLandscape:
    """Fidelity cost ``(1 - |<tgt|U|psi0>|^2) / 2`` in extended precision."""

    def __init__(self, drift, operators, psi0, target, dt):
        with mpmath.workdps(DPS):
            self.drift = _mp(drift)
            self.ops = [_mp(m) for m in operators]
            self.diag_ops = [[mpmath.re(m[j, j]) for j in range(m.rows)] for m in self.ops]
            self.psi0 = _mp(np.asarray(psi0).reshape(-1, 1))
            self.target = _mp(np.asarray(target).reshape(-1, 1))
            self.dt = mpmath.mpf(dt)
            self.dim = self.drift.rows
            self.diagonal = all(not np.any(np.asarray(m) - np.diag(np.diagonal(m)))
                                for m in operators)
            self._ud = None

    @classmethod
    def supports(cls, model):
        return all(getattr(term, "bilinear", False) and hasattr(term, "operator")
                   for term in model.controls)

    @classmethod
    def from_problem(cls, problem, dt=None):
        if not cls.supports(problem.model):
            raise UnsupportedModelError("reference landscape needs bilinear linear controls")
        ops = [term.operator for term in problem.model.controls]
        return cls(problem.model.drift, ops, problem.psi0, problem.psi_target,
                   problem.grid.dt if dt is None else dt)

    # -- single steps ----------------------------------------------------------

    def _h(self, values):
        h = self.drift.copy()
        for x, m in zip(values, self.ops):
            h += x * m
        return h

    def _half(self, values):
        phases = [mpmath.mpf(0)] * self.dim
        for x, d in zip(values, self.diag_ops):
            for j in range(self.dim):
                phases[j] += x * d[j]
        return [mpmath.exp(-0.5j * self.dt * p) for p in phases]

    def _step(self, scheme, left, right):
        """Step matrix from the control columns at both ends of the interval."""
        if scheme == "Ex2":
            return mpmath.expm(-1j * self.dt * self._h(left))
        if scheme == "Ex1":
            return mpmath.expm(-1j * self.dt * (self._h(left) + self._h(right)) / 2)
        if not self.diagonal:
            raise UnsupportedModelError("Trotter schemes need diagonal control operators")
        if self._ud is None:
            self._ud = mpmath.expm(-1j * self.dt * self.drift)
        first = self._half(left)
        lead = self._half(right if scheme == "ST1" else left)
        return mpmath.matrix([[lead[i] * self._ud[i, j] * first[j] for j in range(self.dim)]
                              for i in range(self.dim)])

    @staticmethod
    def _columns(u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return [[mpmath.mpf(float(x)) for x in u[:, n]] for n in range(u.shape[1])]

    def _check(self, scheme):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")

    def _sweeps(self, scheme, cols):
        """Step matrices, forward states and backward covectors."""
        n_t = len(cols)
        steps = [self._step(scheme, cols[n], cols[n + 1]) for n in range(n_t - 1)]
        psi = [self.psi0]
        for m in steps:
            psi.append(m * psi[-1])
        chi = [None] * n_t
        chi[-1] = self.target
        for n in range(n_t - 2, -1, -1):
            chi[n] = steps[n].H * chi[n + 1]
        return steps, psi, chi

    @staticmethod
    def _cost_of(o):
        return (1 - abs(o) ** 2) / 2

    def _inner(self, a, b):
        return sum(mpmath.conj(a[j]) * b[j] for j in range(self.dim))

    # -- landscape -----------------------------------------------------------------

    def state(self, scheme, u):
        """Final state (mpmath column vector)."""
        self._check(scheme)
        with mpmath.workdps(DPS):
            cols = self._columns(u)
            psi = self.psi0
            for n in range(len(cols) - 1):
                psi = self._step(scheme, cols[n], cols[n + 1]) * psi
            return psi

    def cost_mp(self, scheme, u):
        with mpmath.workdps(DPS):
            return self._cost_of(self._inner(self.target, self.state(scheme, u)))

    def cost(self, scheme, u):
        return float(self.cost_mp(scheme, u))

    def _central(self, scheme, u, h):
        self._check(scheme)
        u = np.atleast_2d(np.asarray(u, dtype=float))
        grad = np.zeros(u.shape)
        with mpmath.workdps(DPS):
            cols = self._columns(u)
            n_t = len(cols)
            steps, psi, chi = self._sweeps(scheme, cols)
            two_sided = scheme in ("Ex1", "ST1")
            h = mpmath.mpf(h)
            for k in range(u.shape[0]):
                for n in range(n_t):
                    touched = [j for j in ((n - 1, n) if two_sided else (n,)) if 0 <= j < n_t - 1]
                    if not touched:
                        continue  # u_n never enters the dynamics
                    values = []
                    for sign in (1, -1):
                        shifted = [list(c) for c in cols]
                        shifted[n][k] += sign * h
                        v = psi[touched[0]]
                        for j in touched:
                            v = self._step(scheme, shifted[j], shifted[j + 1]) * v
                        values.append(self._cost_of(self._inner(chi[touched[-1] + 1], v)))
                    grad[k, n] = float((values[0] - values[1]) / (2 * h))
        return grad

    def fd_gradient(self, scheme, u, eps=FD_EPS):
        """Central differences with step `eps`, costs evaluated at 40 digits."""
        return self._central(scheme, u, eps)

    def exact_gradient(self, scheme, u, h=1e-15):
        """Gradient by central differences inside the 40-digit landscape;
        truncation O(h^2) ~ 1e-30, so this is exact at double precision."""
        return self._central(scheme, u, h)


__all__ = ["ReferenceLandscape", "DPS"]

"""Cost assembly and quasi-Newton minimization.

The optimizer works on the flattened control vector. :func:`bfgs` is a
plain inverse-BFGS loop with a strong-Wolfe line search that accepts any
function returning ``(J, grad, info)``; :func:`bfgs_minimize` wires it to a
control problem.
"""
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from ._validation import check_non_negative
from .derivatives import (GradientMethod, fidelity_gradient, fidelity_hessian, reg_amplitude,
                          reg_smoothness)
from .exceptions import InvalidInputError, InvalidStateError
from .model import ControlVector, TimeGrid
from .propagate import Scheme, evolve, overlap_fidelity, precompute_drift_cache

CURVATURE_GUARD = 1e-12
MAX_SHIFTS = 60
ROUNDING = 4.0 * np.finfo(float).eps


@dataclass(frozen=True)
class CostSpec:
    """Which landscape to optimize and how to differentiate it.

    ``scheme`` defaults to the one matching ``gradient_method`` (Ex2 for the
    exact-propagator gradients).
    """

    gradient_method: GradientMethod
    scheme: Optional[Scheme] = None
    alpha: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        method = GradientMethod.parse(self.gradient_method)
        scheme = method.scheme if self.scheme is None else Scheme.parse(self.scheme)
        if scheme is not method.scheme:
            raise InvalidInputError(
                f"gradient method {method.label} differentiates the {method.scheme} landscape, "
                f"not {scheme}")
        object.__setattr__(self, "gradient_method", method)
        object.__setattr__(self, "scheme", scheme)
        object.__setattr__(self, "alpha", check_non_negative(self.alpha, "alpha"))
        object.__setattr__(self, "gamma", check_non_negative(self.gamma, "gamma"))


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 400
    grad_tol: float = 1e-10
    cost_tol: float = 1e-15
    c1: float = 1e-4
    c2: float = 0.9
    max_linesearch: int = 50
    direction: str = "bfgs"

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise InvalidInputError("max_iters must be a non-negative integer")
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise InvalidInputError("need 0 < c1 < c2 < 1")
        if self.max_linesearch < 1:
            raise InvalidInputError("max_linesearch must be positive")
        if self.direction not in ("bfgs", "newton"):
            raise InvalidInputError("direction must be 'bfgs' or 'newton'")
        check_non_negative(self.grad_tol, "grad_tol")
        check_non_negative(self.cost_tol, "cost_tol")


class Iterate(NamedTuple):
    iteration: int
    J: float
    J_F: float
    gradnorm_inf: float
    step_size: float
    wallclock_s: float


@dataclass
class OptimizationRecord:
    iterates: list
    final_control: np.ndarray
    termination: str
    n_evaluations: int = 0
    skipped_updates: int = 0
    flags: list = field(default_factory=list)

    @property
    def final(self):
        return self.iterates[-1]

    @property
    def iterations(self):
        return self.iterates[-1].iteration

    @property
    def final_one_minus_F(self):
        return 2.0 * self.iterates[-1].J_F


# -- cost -------------------------------------------------------------------------

class Objective:
    """``J = J_F + J_alpha + J_gamma`` and its derivatives for one problem.

    The drift exponential is computed on construction, so its cost is not
    part of any later timing.
    """

    def __init__(self, spec, model, psi0, psi_target, grid):
        self.spec = spec
        self.model = model
        self.psi0 = psi0
        self.psi_target = psi_target
        self.grid = grid
        self.cache = precompute_drift_cache(model, grid, spec.scheme) if spec.scheme.trotter else None
        self.n_evaluations = 0

    @property
    def shape(self):
        return (self.model.n_controls, self.grid.n_t)

    def trajectory(self, u):
        return evolve(self.spec.scheme, self.model, self.cache, u, self.psi0, self.psi_target,
                      self.grid.dt)

    def _regularization(self, u):
        cost, grad = 0.0, np.zeros(u.shape)
        if self.spec.alpha > 0:
            c, g, _ = reg_amplitude(u, self.spec.alpha, self.grid.dt)
            cost, grad = cost + c, grad + g
        if self.spec.gamma > 0:
            c, g, _ = reg_smoothness(u, self.spec.gamma, self.grid.dt)
            cost, grad = cost + c, grad + g
        return cost, grad

    def __call__(self, u):
        u = np.asarray(u, dtype=float).reshape(self.shape)
        self.n_evaluations += 1
        traj = self.trajectory(u)
        j_f = overlap_fidelity(traj)[2]
        grad = fidelity_gradient(self.spec.gradient_method, self.model, traj, u)
        reg_cost, reg_grad = self._regularization(u)
        return j_f + reg_cost, grad + reg_grad, {"J_F": j_f, "traj": traj}

    def hessian(self, u, traj=None):
        u = np.asarray(u, dtype=float).reshape(self.shape)
        traj = self.trajectory(u) if traj is None else traj
        hess = fidelity_hessian(self.spec.gradient_method, self.model, traj, u)
        if self.spec.alpha > 0:
            hess = hess + np.diag(reg_amplitude(u, self.spec.alpha, self.grid.dt)[2].reshape(-1))
        if self.spec.gamma > 0:
            hess = hess + reg_smoothness(u, self.spec.gamma, self.grid.dt)[2]
        return hess


def _grid_of(u, dt):
    if isinstance(u, ControlVector):
        return u.grid
    if dt is None:
        raise InvalidInputError("dt is required when u is a plain array")
    return TimeGrid(dt, np.atleast_2d(u).shape[1])


def cost_and_grad(spec, model, u, psi0, psi_target, dt=None):
    """Total cost, its gradient (shape ``(K, n_t)``) and the trajectory."""
    objective = Objective(spec, model, psi0, psi_target, _grid_of(u, dt))
    cost, grad, info = objective(getattr(u, "values", u))
    return cost, grad, info["traj"]


# -- line search ------------------------------------------------------------------

class LineSearchResult(NamedTuple):
    alpha: float
    x: np.ndarray
    J: float
    grad: np.ndarray
    info: dict
    success: bool
    n_evaluations: int


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    if a == b:
        return None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    radicand = d1 * d1 - da * db
    if radicand < 0:
        return None
    d2 = np.copysign(np.sqrt(radicand), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def wolfe_linesearch(fun, x, p, J0, grad0, c1=1e-4, c2=0.9, max_evals=50, alpha0=1.0):
    """Strong-Wolfe line search along `p` (bracketing by doubling, then zoom).

    `fun` maps a point to ``(J, grad, info)``. On failure the lowest point
    found is returned with ``success=False`` (``alpha=0`` if nothing beat
    ``J0``).
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    grad0 = np.asarray(grad0, dtype=float)
    slope0 = float(np.dot(grad0.ravel(), p.ravel()))
    if not slope0 < 0:
        raise InvalidInputError("line search direction is not a descent direction")
    evals = 0
    best = (0.0, x, J0, grad0, {})
    noise = ROUNDING * abs(J0)

    def phi(alpha):
        nonlocal evals, best
        evals += 1
        point = x + alpha * p
        J, g, info = fun(point)
        g = np.asarray(g, dtype=float)
        if np.isfinite(J) and J < best[2]:
            best = (alpha, point, J, g, info)
        return J, float(np.dot(g.ravel(), p.ravel())), (alpha, point, J, g, info)

    def done(entry):
        return LineSearchResult(entry[0], entry[1], entry[2], entry[3], entry[4], True, evals)

    def armijo_fails(alpha, J):
        if not np.isfinite(J):
            return True
        if J <= J0 + c1 * alpha * slope0:
            return False
        # predicted decrease below the rounding of J0: any non-increase will do
        return not (J <= J0 and -c1 * alpha * slope0 <= noise)

    def worse(f, ref):
        # differences at rounding level carry no information; the slopes decide
        return f - ref > noise

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while evals < max_evals:
            width = hi - lo
            trial = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi) if np.isfinite(f_hi) else None
            if trial is None or not (min(lo, hi) + 0.1 * abs(width) <= trial
                                     <= max(lo, hi) - 0.1 * abs(width)):
                trial = lo + 0.5 * width
            f, d, entry = phi(trial)
            if armijo_fails(trial, f) or worse(f, f_lo):
                hi, f_hi, d_hi = trial, f, d
            else:
                if abs(d) <= -c2 * slope0:
                    return entry
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = trial, f, d
        return None

    prev, f_prev, d_prev = 0.0, J0, slope0
    alpha = alpha0
    found = None
    while evals < max_evals:
        f, d, entry = phi(alpha)
        if armijo_fails(alpha, f) or (evals > 1 and worse(f, f_prev)):
            found = zoom(prev, f_prev, d_prev, alpha, f, d)
            break
        if abs(d) <= -c2 * slope0:
            found = entry
            break
        if d >= 0:
            found = zoom(alpha, f, d, prev, f_prev, d_prev)
            break
        prev, f_prev, d_prev = alpha, f, d
        alpha *= 2.0
    if found is not None:
        return done(found)
    alpha, point, J, g, info = best
    return LineSearchResult(alpha, point, J, g, info, False, evals)


# -- minimizers -------------------------------------------------------------------

def _termination(J_F, gradnorm, iteration, config):
    if J_F is not None and J_F <= config.cost_tol:
        return "converged-cost"
    if gradnorm <= config.grad_tol:
        return "converged-grad"
    if iteration >= config.max_iters:
        return "max-iters"
    return None


def bfgs(fun, x0, config=None, hessian=None):
    """Minimize ``fun(x) -> (J, grad, info)`` from `x0`.

    ``info["J_F"]``, when present, drives the cost-based stopping rule and is
    recorded per iterate (``J`` is recorded otherwise). With
    ``config.direction == "newton"`` the `hessian` callable ``(x, info) -> H``
    supplies Newton directions instead of the BFGS model.

    Returns
    -------
    OptimizationRecord
    """
    config = OptimizerConfig() if config is None else config
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("initial point must be finite")
    if config.direction == "newton" and hessian is None:
        raise InvalidStateError("newton direction needs a Hessian callable")
    shape = x.shape
    start = time.perf_counter()
    J, g, info = fun(x)
    g = np.asarray(g, dtype=float)
    evaluations = 1
    j_f = info.get("J_F")
    iterates = [Iterate(0, J, J if j_f is None else j_f, float(np.max(np.abs(g))), 0.0,
                        time.perf_counter() - start)]
    flags, skipped = [], 0
    n = x.size
    h_inv = np.eye(n)
    scaled = False
    iteration = 0
    reason = _termination(j_f, iterates[0].gradnorm_inf, 0, config)
    while reason is None:
        gf = g.ravel()
        if config.direction == "newton":
            step_info = {}
            p = newton_direction(hessian(x, info), gf, step_info)
            if step_info.get("fallback"):
                flags.append((iteration, "newton-fallback"))
        else:
            p = -h_inv @ gf
            if not np.dot(p, gf) < 0:
                h_inv = np.eye(n)
                scaled = False
                p = -gf
                flags.append((iteration, "bfgs-reset"))
        result = wolfe_linesearch(fun, x, p.reshape(shape), J, g, config.c1, config.c2,
                                  config.max_linesearch)
        evaluations += result.n_evaluations
        if result.alpha == 0.0:
            reason = "linesearch-failure"
            break
        s = (result.x - x).ravel()
        y = (result.grad - g).ravel()
        x, J, g, info = result.x, result.J, result.grad, result.info
        iteration += 1
        j_f = info.get("J_F")
        iterates.append(Iterate(iteration, J, J if j_f is None else j_f,
                                float(np.max(np.abs(g))), result.alpha,
                                time.perf_counter() - start))
        if not result.success:
            reason = "linesearch-failure"
            break
        sy = float(np.dot(s, y))
        if sy > CURVATURE_GUARD * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                h_inv = (sy / float(np.dot(y, y))) * np.eye(n)
                scaled = True
            rho = 1.0 / sy
            hy = h_inv @ y
            h_inv = (h_inv - rho * (np.outer(s, hy) + np.outer(hy, s))
                     + (rho * rho * float(np.dot(y, hy)) + rho) * np.outer(s, s))
        else:
            skipped += 1
        reason = _termination(j_f, iterates[-1].gradnorm_inf, iteration, config)
    return OptimizationRecord(iterates, x, reason, evaluations, skipped, flags)


def bfgs_minimize(spec, model, problem, u0, config=None):
    """Optimize the control of `problem` under `spec` from the start `u0`.

    `model` is the Hamiltonian actually propagated (e.g. a control-diagonal
    version of ``problem.model``); states and grid come from `problem`.
    Wall-clock time excludes the drift-exponential precomputation.
    """
    objective = Objective(spec, model, problem.psi0, problem.psi_target, problem.grid)
    u0 = np.asarray(getattr(u0, "values", u0), dtype=float).reshape(objective.shape)

    def hessian(x, info):
        return objective.hessian(x, info.get("traj"))

    record = bfgs(objective, u0, config, hessian)
    record.final_control = ControlVector(problem.grid, record.final_control)
    record.n_evaluations = objective.n_evaluations
    return record


def newton_direction(hess, grad, info=None):
    """Solve ``(H + lam I) p = -g`` with the smallest shift ``lam`` from
    ``{0, 1e-8, 2e-8, ...}`` that makes the Cholesky factorization succeed."""
    grad = np.asarray(grad, dtype=float).ravel()
    hess = np.asarray(hess, dtype=float)
    info = {} if info is None else info
    info.update(shift=0.0, fallback=False)
    if not np.any(grad):
        return np.zeros_like(grad)
    eye = np.eye(grad.size)
    shift = 0.0
    for attempt in range(MAX_SHIFTS + 1):
        try:
            factor = np.linalg.cholesky(hess + shift * eye)
        except np.linalg.LinAlgError:
            shift = 1e-8 if attempt == 0 else 2.0 * shift
            continue
        p = -np.linalg.solve(factor.T, np.linalg.solve(factor, grad))
        info["shift"] = shift
        return p
    info["fallback"] = True
    return -grad


def newton_step(spec, model, u, traj, psi0=None, psi_target=None, info=None):
    """Newton direction at `u` from the analytic Hessian of `spec`'s landscape.

    Returns an array shaped like `u`; `info` (if given) receives the shift
    used and whether the steepest-descent fallback was taken.
    """
    values = np.asarray(getattr(u, "values", u), dtype=float)
    values = values.reshape(model.n_controls, -1)
    grid = TimeGrid(traj.dt, traj.n_t)
    objective = Objective(spec, model, traj.psi[0] if psi0 is None else psi0,
                          traj.chi[-1] if psi_target is None else psi_target, grid)
    grad = fidelity_gradient(spec.gradient_method, model, traj, values)
    grad = grad + objective._regularization(values)[1]
    hess = objective.hessian(values, traj)
    return newton_direction(hess, grad, info).reshape(values.shape)


def seed_control(grid, k_controls, lo, hi, seed):
    """Uniform random control from NumPy's PCG64 generator seeded with `seed`."""
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise InvalidInputError(f"need finite lo < hi, got [{lo}, {hi}]")
    if int(k_controls) != k_controls or k_controls < 1:
        raise InvalidInputError("k_controls must be a positive integer")
    rng = np.random.default_rng(seed)
    return ControlVector(grid, rng.uniform(lo, hi, size=(int(k_controls), grid.n_t)))


__all__ = ["CostSpec", "OptimizerConfig", "Iterate", "OptimizationRecord", "Objective",
           "cost_and_grad", "LineSearchResult", "wolfe_linesearch", "bfgs", "bfgs_minimize",
           "newton_direction", "newton_step", "seed_control"]

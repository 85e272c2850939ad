"""scikit-learn style front end for pulse optimization."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bench import problem_for
from .derivatives import GradientMethod
from .exceptions import InvalidInputError
from .model import Problem, transform_state
from .optimize import CostSpec, OptimizerConfig, bfgs_minimize, seed_control
from .propagate import evolve, overlap_fidelity, precompute_drift_cache


class PulseOptimizer(BaseEstimator):
    """Optimize a piecewise-constant control for a state-transfer problem.

    ``fit`` takes a :class:`~trotterctl.model.Problem` (the "data"), ``predict``
    returns the final state reached with the fitted control and ``score`` its
    fidelity with the target.

    Parameters
    ----------
    gradient_method : str
        ``"ST1"``, ``"ST2"``, ``"ExAux"`` or ``"ExSeries(k)"``.
    alpha, gamma : float
        Amplitude and smoothness regularization weights.
    max_iters, grad_tol, cost_tol : optimizer stopping rules.
    init_low, init_high : float
        Range of the uniform initial control.
    random_state : int
        Seed of the initial control.
    direction : {"bfgs", "newton"}
    """

    def __init__(self, gradient_method="ST1", alpha=0.0, gamma=0.0, max_iters=400,
                 grad_tol=1e-10, cost_tol=1e-15, init_low=-10.0, init_high=10.0,
                 random_state=0, direction="bfgs"):
        self.gradient_method = gradient_method
        self.alpha = alpha
        self.gamma = gamma
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.cost_tol = cost_tol
        self.init_low = init_low
        self.init_high = init_high
        self.random_state = random_state
        self.direction = direction

    def _check_problem(self, problem):
        if not isinstance(problem, Problem):
            raise InvalidInputError("expected a trotterctl Problem (model, psi0, psi_target, grid)")
        return problem

    def fit(self, problem, y=None, u0=None):
        problem = self._check_problem(problem)
        method = GradientMethod.parse(self.gradient_method)
        spec = CostSpec(method, alpha=self.alpha, gamma=self.gamma)
        config = OptimizerConfig(max_iters=self.max_iters, grad_tol=self.grad_tol,
                                 cost_tol=self.cost_tol, direction=self.direction)
        working = problem_for(method, problem)
        if u0 is None:
            u0 = seed_control(problem.grid, problem.model.n_controls, self.init_low,
                              self.init_high, self.random_state)
        record = bfgs_minimize(spec, working.model, working, u0, config)
        self.spec_ = spec
        self.record_ = record
        self.control_ = record.final_control.values
        self.n_iter_ = record.iterations
        self.termination_ = record.termination
        self.fidelity_ = 1.0 - record.final_one_minus_F
        return self

    def _trajectory(self, problem):
        check_is_fitted(self, "control_")
        problem = self._check_problem(problem)
        working = problem_for(self.spec_.gradient_method, problem)
        scheme = self.spec_.scheme
        cache = precompute_drift_cache(working.model, working.grid, scheme) if scheme.trotter else None
        traj = evolve(scheme, working.model, cache, self.control_, working.psi0,
                      working.psi_target, working.grid.dt)
        return working, traj

    def predict(self, problem):
        """Final state (in the basis of `problem`) under the fitted control."""
        working, traj = self._trajectory(problem)
        r = working.model.basis_transform
        final = traj.psi[-1]
        if r is not None and working is not problem:
            final = transform_state(final, np.asarray(r).conj().T)
        return final

    def score(self, problem, y=None):
        """Fidelity ``|<target|psi(T)>|^2`` under the fitted control."""
        return overlap_fidelity(self._trajectory(problem)[1])[1]

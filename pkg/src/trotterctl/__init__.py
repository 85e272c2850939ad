"""Exact derivatives for quantum optimal control with split-operator propagators.

The public API re-exports the main entry points of each module; see the
submodules for the complete set.
"""
from .derivatives import (DerivativeReport, GradientMethod, finite_difference_check, grad_aux,
                          grad_ex_series, grad_st1, grad_st2, hess_ex, hess_st1, hess_st2,
                          kmax_for_tol, reg_amplitude, reg_smoothness)
from .estimator import PulseOptimizer
from .exceptions import ConfigError, InvalidInputError, InvalidStateError, UnsupportedModelError
from .model import (CommutingSetSpec, ControlVector, HamiltonianModel, LinearControl, Problem,
                    TimeGrid, build_hamiltonian, control_diagonalize, group_commuting_sets,
                    make_problem)
from .numerics import comm_deriv_tail, comm_series_tail, herm_eig, matexp, recursive_commutator
from .optimize import (CostSpec, OptimizationRecord, OptimizerConfig, bfgs_minimize,
                       cost_and_grad, newton_step, seed_control, wolfe_linesearch)
from .propagate import (DriftCache, Scheme, Trajectory, evolve, multi_control_step,
                        overlap_fidelity, precompute_drift_cache, propagate_step)

__version__ = "0.1.0"

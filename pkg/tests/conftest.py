import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trotterctl.model import (SIGMA_X, SIGMA_Z, HamiltonianModel, LinearControl, TimeGrid,
                              make_problem)

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TRANSMON_PARAMS = {"Delta": -5.0, "delta1": -20.0, "delta2": -20.0, "kappa": -1.0}

# filled by test_acceptance.py, one entry per criterion
ACCEPTANCE = {}


def record(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture(scope="session")
def lz():
    return make_problem("lz")


@pytest.fixture(scope="session")
def transmon():
    return make_problem("transmon", TRANSMON_PARAMS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def lz_constant(value=5.0, n_t=None):
    """LZ problem at default dt with a constant control (optionally fewer points)."""
    problem = make_problem("lz")
    if n_t is not None:
        problem = problem._replace(grid=TimeGrid(problem.grid.dt, n_t))
    return problem, np.full((1, problem.grid.n_t), float(value))


def random_hermitian(rng, dim):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (g + g.conj().T) / 2


def spin_chain(sites):
    """Open chain with one XX and one ZZ coupling per bond, as control terms."""
    def op(pauli, j):
        mats = [np.eye(2)] * sites
        mats[j] = pauli
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    controls = []
    for pauli in (SIGMA_X, SIGMA_Z):
        for j in range(sites - 1):
            controls.append(LinearControl(op(pauli, j) @ op(pauli, j + 1)))
    drift = sum(op(SIGMA_X, j) + op(SIGMA_Z, j) for j in range(sites)) * 0.3
    return HamiltonianModel(drift, tuple(controls))


def trajectory(problem, scheme, u):
    from trotterctl.propagate import Scheme, evolve, precompute_drift_cache
    scheme = Scheme.parse(scheme)
    cache = precompute_drift_cache(problem.model, problem.grid, scheme) if scheme.trotter else None
    return evolve(scheme, problem.model, cache, u, problem.psi0, problem.psi_target,
                  problem.grid.dt)


def double_cost(problem, scheme):
    """J_F of the scheme's landscape in double precision."""
    from trotterctl.propagate import overlap_fidelity
    return lambda v: overlap_fidelity(trajectory(problem, scheme, v))[2]

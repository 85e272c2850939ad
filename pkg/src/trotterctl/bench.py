"""Experiment drivers behind the command-line interface.

Each ``run_*`` function takes a :class:`~trotterctl.config.RunConfig`,
writes its CSV artifacts into ``config.output_dir`` (when ``write`` is true)
and returns the data it wrote. Floats are printed with 17 significant
digits so that files round-trip exactly.
"""
import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .derivatives import (GradientMethod, commutator_tails, fd_gradient, fd_gradient_columns,
                          fidelity_cost, fidelity_gradient, fidelity_hessian, kmax_for_tol,
                          relative_difference, FD_EPS)
from .exceptions import ConfigError, InvalidInputError
from .model import TimeGrid, diagonalized_problem, make_problem
from .optimize import CostSpec, bfgs_minimize, seed_control
from .propagate import Scheme, evolve, precompute_drift_cache

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["method", "seed", "iteration", "wallclock_s", "J", "J_F", "one_minus_F",
                      "gradnorm_inf", "step_size"]
SUMMARY_COLUMNS = ["method", "seed", "final_one_minus_F", "iterations", "total_s", "termination"]
GRADCHECK_COLUMNS = ["method", "n", "analytic", "fd", "rel_diff"]
TIMING_COLUMNS = ["dim", "method", "median_s"]
ORDER_COLUMNS = ["scheme_pair", "dt", "abs_diff"]
BINS_PER_DECADE = 20
REFERENCE_MAX_DIM = 4


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_csv(path, columns, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def build_problem(config):
    try:
        return make_problem(config.problem.kind, config.problem.params, config.problem.seed)
    except InvalidInputError as exc:
        raise ConfigError(f"problem: {exc}") from exc


def problem_for(method, problem):
    """Rotate to a control-diagonal basis when the method needs it."""
    if method.scheme.trotter and not problem.model.diagonal:
        return diagonalized_problem(problem)
    return problem


# -- optimization sweeps ----------------------------------------------------------------

@dataclass
class SeedSummary:
    method: str
    seed: int
    final_one_minus_F: float
    iterations: int
    total_s: float
    termination: str
    trajectory: list = field(repr=False, default_factory=list)

    def time_to(self, threshold):
        """Wall-clock of the first iterate with ``1-F <= threshold`` (inf if never)."""
        for it in self.trajectory:
            if 2.0 * it.J_F <= threshold:
                return it.wallclock_s
        return math.inf


@dataclass
class SweepResult:
    """Per-seed summaries plus median ``1-F`` curves per method."""

    runs: list

    @property
    def methods(self):
        seen = []
        for r in self.runs:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def by_method(self, method):
        return [r for r in self.runs if r.method == method]

    def final_values(self, method):
        return np.array([r.final_one_minus_F for r in self.by_method(method)])

    def median_final(self, method):
        return float(np.median(self.final_values(method)))

    def fraction_below(self, method, threshold):
        return float(np.mean(self.final_values(method) <= threshold))

    def median_time_to(self, method, threshold):
        return float(np.median([r.time_to(threshold) for r in self.by_method(method)]))

    def median_by_iteration(self, method):
        """Median ``1-F`` per iteration; finished runs carry their last value."""
        runs = self.by_method(method)
        length = max(len(r.trajectory) for r in runs)
        curves = np.array([[2.0 * r.trajectory[min(i, len(r.trajectory) - 1)].J_F
                            for i in range(length)] for r in runs])
        return np.median(curves, axis=0)

    def median_by_time(self, method, bins_per_decade=BINS_PER_DECADE):
        """``(times, medians)`` on logarithmic time bins; each seed contributes
        its most recent value at or before the bin edge."""
        runs = self.by_method(method)
        stamps = [it.wallclock_s for r in runs for it in r.trajectory if it.wallclock_s > 0]
        if not stamps:
            return np.array([]), np.array([])
        lo = math.floor(math.log10(min(stamps)) * bins_per_decade) / bins_per_decade
        hi = math.ceil(math.log10(max(stamps)) * bins_per_decade) / bins_per_decade
        edges = 10.0 ** np.arange(lo, hi + 0.5 / bins_per_decade, 1.0 / bins_per_decade)
        medians = []
        for t in edges:
            values = []
            for r in runs:
                current = r.trajectory[0]
                for it in r.trajectory:
                    if it.wallclock_s <= t:
                        current = it
                    else:
                        break
                values.append(2.0 * current.J_F)
            medians.append(float(np.median(values)))
        return edges, np.array(medians)


def _run_one(args):
    config_dict, label, seed = args
    config = RunConfig.from_dict(config_dict)
    method = GradientMethod.parse(label)
    problem = problem_for(method, build_problem(config))
    spec = CostSpec(method, alpha=config.regularization.alpha, gamma=config.regularization.gamma)
    u0 = seed_control(problem.grid, problem.model.n_controls, config.initial_control.lo,
                      config.initial_control.hi, seed)
    record = bfgs_minimize(spec, problem.model, problem, u0, config.optimizer)
    return SeedSummary(method.label, seed, record.final_one_minus_F, record.iterations,
                       record.final.wallclock_s, record.termination, record.iterates)


def run_optimize(config, threads=1, write=True, progress=None):
    """Run every (method, seed) pair and write trajectories.csv and summary.csv."""
    build_problem(config)
    tasks = [(config.to_dict(), m.label, seed) for m in config.methods for seed in config.seeds]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(_run_one, tasks))
    else:
        runs = []
        for task in tasks:
            runs.append(_run_one(task))
            if progress:
                progress(runs[-1])
    result = SweepResult(runs)
    if write:
        write_sweep(result, config.output_dir)
    return result


def write_sweep(result, directory):
    rows = []
    for r in result.runs:
        for it in r.trajectory:
            rows.append({"method": r.method, "seed": r.seed, "iteration": it.iteration,
                         "wallclock_s": it.wallclock_s, "J": it.J, "J_F": it.J_F,
                         "one_minus_F": 2.0 * it.J_F, "gradnorm_inf": it.gradnorm_inf,
                         "step_size": float(it.step_size)})
    write_csv(os.path.join(directory, "trajectories.csv"), TRAJECTORY_COLUMNS, rows)
    write_csv(os.path.join(directory, "summary.csv"), SUMMARY_COLUMNS,
              [{c: getattr(r, c) for c in SUMMARY_COLUMNS} for r in result.runs])
    curve_rows, time_rows = [], []
    for method in result.methods:
        for i, value in enumerate(result.median_by_iteration(method)):
            curve_rows.append({"method": method, "iteration": i, "median_one_minus_F": value})
        for t, value in zip(*result.median_by_time(method)):
            time_rows.append({"method": method, "wallclock_s": t, "median_one_minus_F": value})
    write_csv(os.path.join(directory, "median_by_iteration.csv"),
              ["method", "iteration", "median_one_minus_F"], curve_rows)
    write_csv(os.path.join(directory, "median_by_time.csv"),
              ["method", "wallclock_s", "median_one_minus_F"], time_rows)


# -- gradient checks ----------------------------------------------------------------

def evaluation_control(config, grid, n_controls):
    c = config.control
    if c.kind == "constant":
        return np.full((n_controls, grid.n_t), float(c.value))
    if c.kind == "uniform":
        return seed_control(grid, n_controls, c.lo, c.hi, c.seed).values
    if c.kind == "sine":
        shape = np.sin(2.0 * np.pi * grid.times / grid.duration)
        return np.tile(c.amplitude * shape, (n_controls, 1))
    raise ConfigError(f"control.kind must be constant, uniform or sine, got {c.kind!r}")


def _fd_route(config, problem):
    choice = config.gradcheck.fd_precision
    if choice not in ("auto", "double", "extended"):
        raise ConfigError("gradcheck.fd_precision must be auto, double or extended")
    if choice == "auto":
        from .reference import ReferenceLandscape
        ok = ReferenceLandscape.supports(problem.model) and problem.model.dim <= REFERENCE_MAX_DIM
        return "extended" if ok else "double"
    return choice


def run_gradcheck(config, write=True):
    """Analytic gradients (and optionally Hessians) against central differences.

    With ``fd_precision`` "extended" the differenced landscape is evaluated
    in 40-digit arithmetic (see :mod:`trotterctl.reference`); "auto" picks it
    for small bilinear models.
    """
    base = build_problem(config)
    if config.gradcheck.n_t is not None:
        base = base._replace(grid=TimeGrid(base.grid.dt, int(config.gradcheck.n_t)))
    eps = FD_EPS if config.gradcheck.eps is None else float(config.gradcheck.eps)
    rows = []
    for method in config.methods:
        problem = problem_for(method, base)
        model, grid = problem.model, problem.grid
        u = evaluation_control(config, grid, model.n_controls)
        scheme = method.scheme
        cache = precompute_drift_cache(model, grid, scheme) if scheme.trotter else None

        def traj_at(v):
            return evolve(scheme, model, cache, v, problem.psi0, problem.psi_target, grid.dt)

        def grad_at(v, method=method):
            return fidelity_gradient(method, model, traj_at(v), v)

        route = _fd_route(config, problem)
        analytic = grad_at(u)
        if route == "extended":
            from .reference import ReferenceLandscape
            ref = ReferenceLandscape.from_problem(problem)
            fd = ref.fd_gradient(scheme.value, u, eps)

            def exact_grad(v):
                return ref.exact_gradient(scheme.value, v)
        else:
            def cost(v):
                return fidelity_cost(scheme, model, cache, v, problem.psi0, problem.psi_target,
                                     grid.dt)
            fd = fd_gradient(cost, u, eps)
            exact_grad = grad_at

        rel = relative_difference(analytic, fd)
        for i, (a, f, r) in enumerate(zip(analytic.ravel(), fd.ravel(), rel.ravel())):
            rows.append({"method": method.label, "n": i, "analytic": a, "fd": f, "rel_diff": r})
        if config.gradcheck.hessian:
            if method.tag == "ExSeries" and method.kmax == 0:
                continue
            hess = fidelity_hessian(method, model, traj_at(u), u)
            fd_h = fd_gradient_columns(exact_grad, u, eps)
            rel_h = relative_difference(hess, fd_h)
            for i, (a, f, r) in enumerate(zip(hess.ravel(), fd_h.ravel(), rel_h.ravel())):
                rows.append({"method": f"{method.label}:hessian", "n": i, "analytic": a, "fd": f,
                             "rel_diff": r})
    if write:
        write_csv(os.path.join(config.output_dir, "gradcheck.csv"), GRADCHECK_COLUMNS, rows)
    return rows


# -- timing -----------------------------------------------------------------------------

TIMING_METHODS = ["ST1", "ST2", "ExSeries", "ExAux", "tail-only"]


def _time_gradient(label, problem, u, dt, kmax):
    model = problem.model
    if label == "tail-only":
        start = time.perf_counter()
        commutator_tails(model, u, dt, kmax)
        return time.perf_counter() - start
    method = GradientMethod("ExSeries", kmax) if label == "ExSeries" else GradientMethod.parse(label)
    cache = precompute_drift_cache(model, problem.grid, method.scheme) if method.scheme.trotter else None
    start = time.perf_counter()
    traj = evolve(method.scheme, model, cache, u, problem.psi0, problem.psi_target, dt)
    fidelity_gradient(method, model, traj, u)
    return time.perf_counter() - start


def run_timing(dims=None, n_t=400, reps=10, dt=0.05, seed=0, output_dir=None, methods=None,
               progress=None):
    """Median wall time of one full gradient evaluation per dimension and method.

    Every repetition draws a fresh random model and a uniform(-1, 1) control.
    ``ExSeries`` uses ``kmax_for_tol(dt)``; ``tail-only`` times just the
    commutator-series matrices of that gradient.
    """
    dims = [2, 4, 8, 16, 32, 64, 128] if dims is None else list(dims)
    methods = TIMING_METHODS if methods is None else list(methods)
    if any(d < 2 for d in dims):
        raise InvalidInputError("dims must be >= 2")
    if reps < 3:
        raise InvalidInputError("reps must be >= 3")
    kmax = kmax_for_tol(dt)
    rows = []
    for dim in dims:
        samples = {m: [] for m in methods}
        failed = set()
        for rep in range(reps):
            problem = make_problem("random", {"dim": dim, "n_t": n_t, "dt": dt}, seed + rep)
            rng = np.random.default_rng(seed + rep)
            u = rng.uniform(-1.0, 1.0, size=(1, n_t))
            for m in methods:
                if m in failed:
                    continue
                try:
                    samples[m].append(_time_gradient(m, problem, u, dt, kmax))
                except MemoryError:
                    log.warning("out of memory for %s at dim %d", m, dim)
                    failed.add(m)
        for m in methods:
            value = float(np.median(samples[m])) if m not in failed and samples[m] else float("nan")
            rows.append({"dim": dim, "method": m, "median_s": value})
            if progress:
                progress(rows[-1])
    if output_dir is not None:
        write_csv(os.path.join(output_dir, "timing.csv"), TIMING_COLUMNS, rows)
    return rows


def run_timing_config(config):
    t = config.timing
    return run_timing(t.dims, t.n_t, t.reps, t.dt, t.seed, config.output_dir)


# -- landscape order ------------------------------------------------------------------

def run_landscape_order(config, problem=None, write=True):
    """``|J^ST - J^Ex|`` for a smooth control on refined grids, with the
    least-squares slope of ``log|dJ|`` against ``log dt``.

    Returns ``(rows, slopes)``; slopes are ``nan`` when a difference is zero.
    """
    problem = build_problem(config) if problem is None else problem
    duration = problem.grid.duration
    rows, slopes = [], {}
    for pair in config.landscape.pairs:
        try:
            st, ex = (Scheme.parse(s) for s in pair.split("-"))
        except (InvalidInputError, ValueError) as exc:
            raise ConfigError(f"landscape.pairs: bad pair {pair!r}") from exc
        if not st.trotter or ex.trotter:
            raise ConfigError(f"landscape.pairs: {pair!r} must be <Trotter>-<exact>")
        dts, diffs = [], []
        for requested in config.landscape.dts:
            grid = TimeGrid.from_duration(duration, requested)
            shape = np.sin(2.0 * np.pi * grid.times / duration)
            u = np.tile(config.landscape.amplitude * shape, (problem.model.n_controls, 1))
            costs = []
            for scheme in (st, ex):
                cache = precompute_drift_cache(problem.model, grid, scheme) if scheme.trotter else None
                costs.append(fidelity_cost(scheme, problem.model, cache, u, problem.psi0,
                                           problem.psi_target, grid.dt))
            diff = abs(costs[0] - costs[1])
            dts.append(grid.dt)
            diffs.append(diff)
            rows.append({"scheme_pair": pair, "dt": grid.dt, "abs_diff": diff})
        diffs = np.array(diffs)
        if np.all(diffs > 0):
            slopes[pair] = float(np.polyfit(np.log(dts), np.log(diffs), 1)[0])
        else:
            slopes[pair] = float("nan")
    if write:
        write_csv(os.path.join(config.output_dir, "order.csv"), ORDER_COLUMNS, rows)
        write_csv(os.path.join(config.output_dir, "order_slopes.csv"), ["scheme_pair", "slope"],
                  [{"scheme_pair": k, "slope": v} for k, v in slopes.items()])
    return rows, slopes


__all__ = ["RunConfig", "SweepResult", "SeedSummary", "run_optimize", "run_gradcheck",
           "run_timing", "run_timing_config", "run_landscape_order", "write_csv", "read_csv",
           "build_problem", "problem_for", "evaluation_control"]

"""Command-line entry point: ``trotterctl {optimize,gradcheck,timing,landscape}``.

Exit status is 0 on success, 1 for configuration errors and 2 for failures
during a run.
"""
import argparse
import logging
import sys

import numpy as np

from . import bench
from .config import RunConfig
from .exceptions import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser():
    parser = argparse.ArgumentParser(prog="trotterctl",
                                     description="Quantum optimal control benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("optimize", "BFGS sweeps over seeds and gradient methods"),
                       ("gradcheck", "analytic derivatives against finite differences"),
                       ("timing", "gradient wall time against Hilbert space dimension"),
                       ("landscape", "convergence order of Trotter landscapes")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON run configuration (defaults apply if omitted)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for independent seeds (optimize only)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def _load(args):
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.out:
        config.output_dir = args.out
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return config


def _say(args, *parts):
    if not args.quiet:
        print(*parts)


def _optimize(args, config):
    def progress(run):
        _say(args, f"{run.method:>14} seed {run.seed:>4}: 1-F = {run.final_one_minus_F:.3e} "
                   f"after {run.iterations} it, {run.total_s:.3f}s ({run.termination})")

    result = bench.run_optimize(config, threads=args.threads, progress=progress)
    for method in result.methods:
        _say(args, f"{method:>14}: median final 1-F {result.median_final(method):.3e}, "
                   f"{100 * result.fraction_below(method, 1e-12):.0f}% <= 1e-12, "
                   f"median time to 1e-10 {result.median_time_to(method, 1e-10):.3g}s")


def _gradcheck(args, config):
    rows = bench.run_gradcheck(config)
    worst = {}
    for row in rows:
        worst[row["method"]] = max(worst.get(row["method"], 0.0), row["rel_diff"])
    for method, value in worst.items():
        _say(args, f"{method:>22}: max relative deviation {value:.3e}")


def _timing(args, config):
    t = config.timing

    def progress(row):
        _say(args, f"dim {row['dim']:>4} {row['method']:>10}: {row['median_s']:.4g}s")

    bench.run_timing(t.dims, t.n_t, t.reps, t.dt, t.seed, config.output_dir, progress=progress)


def _landscape(args, config):
    rows, slopes = bench.run_landscape_order(config)
    for pair, slope in slopes.items():
        _say(args, f"{pair}: log-log slope {slope:.3f}")


COMMANDS = {"optimize": _optimize, "gradcheck": _gradcheck, "timing": _timing,
            "landscape": _landscape}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with np.errstate(all="ignore"):
            COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported through the exit status
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

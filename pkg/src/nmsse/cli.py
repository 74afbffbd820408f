"""``simulate <config> [--out DIR] [--workers N] [--dump-trajectories]``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import ConfigError, parse_config
from .experiments import OUT_ENV, run_experiment
from .integrators import BlowUp, DegenerateNorm, SingularFactor

EXIT_PASS, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser():
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Run one trajectory / memory-equation experiment from a YAML config.")
    p.add_argument("config", help="path to the YAML (or JSON) configuration")
    p.add_argument("--out", metavar="DIR",
                   help=f"output directory (default: config output.directory, then ${OUT_ENV}, "
                        "then ./results)")
    p.add_argument("--workers", type=int, default=1, metavar="N",
                   help="worker processes for ensembles; results do not depend on it")
    p.add_argument("--dump-trajectories", action="store_true",
                   help="also write the first few trajectories of each ensemble")
    p.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_experiment(cfg, args.out, args.workers, args.dump_trajectories)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUp, DegenerateNorm, SingularFactor, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not args.quiet:
        print(f"{cfg.experiment}: {manifest.wall_clock:.2f} s")
        for name, ok in manifest.checks.items():
            print(f"  {'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_PASS if manifest.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``nmzlearn <mode> --config run.ini [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .core import NumericalError
from .experiment import MODES, ConfigError, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmzlearn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} workflow")
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--out", help="override [run] out (output directory)")
        p.add_argument("--workers", type=int, help="override [run] workers")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"run": {"mode": args.mode}}
    if args.seed is not None:
        overrides["run"]["seed"] = str(args.seed)
    if args.out is not None:
        overrides["run"]["out"] = args.out
    if args.workers is not None:
        overrides["run"]["workers"] = str(args.workers)
    try:
        cfg = load_config(args.config, overrides, expect_mode=args.mode)
        run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{args.mode}: outputs written to {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

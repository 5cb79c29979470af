"""Command-line entry point.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .experiments import ConfigError, ExperimentConfig, run_experiment
from .family import RankDeficientFamilyError

SUBCOMMANDS = {
    "phi-profile": "phi_profile",
    "localize": "localize",
    "noise-sweep": "noise_sweep",
    "gamma-error": "gamma_error",
    "phase-transition": "phase_transition",
    "demo-2d": "demo2d",
    "mc-amplitude": "mc_amplitude",
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindloc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment configuration (JSON)")
        p.add_argument("--seed", type=_seed, default=None, help="override the configuration seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--paper-scale", action="store_true", help="use full trial counts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    log = logging.getLogger("blindloc")
    try:
        cfg = ExperimentConfig.from_file(args.config, SUBCOMMANDS[args.command], args.seed, args.paper_scale)
        with np.errstate(divide="raise", invalid="raise", over="raise"):
            run_experiment(cfg, args.out)
    except RankDeficientFamilyError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, ArithmeticError, FloatingPointError, AssertionError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

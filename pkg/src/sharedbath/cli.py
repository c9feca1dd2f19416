"""Command-line front end: ``sharedbath run|optimize|validate``.

Exit codes: 0 success, 1 failed validation check, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import DEFAULT_CONFIG, ConfigError, ExperimentConfig, load_config
from .dynamics import NonFiniteStateError
from .observables import UnphysicalCovariance
from .pulses import PulseFileError, PulseKind

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sharedbath", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "propagate an ensemble under one pulse"),
                        ("optimize", "Krotov-optimize the drive, then run it")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--output", help="output directory")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--workers", type=int)
    sub.add_parser("validate", help="run the quick invariant battery")
    sub.add_parser("default-config", help="print an example config")
    return parser


def _experiment(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "master_seed": args.seed, "output_path": args.output,
        "output_format": args.format, "workers": args.workers,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return dataclasses.replace(config, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import harness

    if args.command == "default-config":
        sys.stdout.write(DEFAULT_CONFIG)
        return EXIT_OK
    if args.command == "validate":
        results = harness.validate_suite()
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
        return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED

    try:
        config = _experiment(args)
        if args.command == "optimize":
            if config.pulse.kind is not PulseKind.OPTIMIZED:
                raise ConfigError("optimize needs pulse.kind: optimized in the config")
            summary, _ = harness.run_optimization(config)
        else:
            if config.pulse.kind is PulseKind.OPTIMIZED:
                raise ConfigError("pulse.kind optimized requires the optimize command")
            summary = harness.run_experiment(config)
    except (ConfigError, PulseFileError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteStateError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except UnphysicalCovariance as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"final -ln(nu_minus) = {summary['final_neg_log_nu']:.6g}, "
          f"E_N = {summary['final_E_N']:.6g}, "
          f"second-moment sum = {summary['final_second_moment_sum']:.6g}")
    print(f"outputs in {config.output_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

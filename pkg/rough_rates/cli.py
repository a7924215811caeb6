import argparse
import dataclasses
import json
import logging
import sys
from collections.abc import Sequence
from typing import Any

from rough_rates.experiments import (
    ExperimentConfig,
    InvariantConfig,
    InvariantSummary,
    emit_report,
    load_config,
    load_path_csv,
    run_experiment,
)
from rough_rates.path_signatures import MultiplicativeFunctional, signature_of_path
from rough_rates.variation_metrics import p_variation_level

LOGGER = logging.getLogger(__name__)

EXPERIMENT_COMMANDS = {"wong-zakai": "wong_zakai", "heat": "heat", "invariants": "invariants"}


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--seed", type=int, help="64-bit unsigned seed")
    parser.add_argument("--out", help="directory for the CSV and JSON reports")
    parser.add_argument("--samples", type=int, help="Monte Carlo sample count")
    parser.add_argument("--threads", type=int, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rough-rates",
        description="Rate experiments and numerical checks for Gaussian rough paths.",
    )
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(commands.add_parser("wong-zakai", help="piecewise-linear approximation rate"))
    _add_run_flags(commands.add_parser("heat", help="time regularity of the heat field"))
    invariants = commands.add_parser("invariants", help="invariant and oracle suite")
    _add_run_flags(invariants)
    invariants.add_argument(
        "--fault",
        action="append",
        choices=InvariantConfig.FAULTS,
        default=[],
        help="inject a fault into one check (repeatable)",
    )

    signature = commands.add_parser("signature", help="truncated signature of a CSV path")
    signature.add_argument("path", help="CSV file with time,x_1,...,x_d rows")
    signature.add_argument("--degree", type=int, default=3)

    variation = commands.add_parser("variation", help="p-variation of each signature level")
    variation.add_argument("path", help="CSV file with time,x_1,...,x_d rows")
    variation.add_argument("--p", type=float, default=2.5)
    variation.add_argument("--levels", type=int, default=2)
    return parser


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides: dict[str, Any] = {"kind": EXPERIMENT_COMMANDS[args.command]}
    for name in ("seed", "out", "samples", "threads"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if getattr(args, "fault", None):
        overrides["invariants"] = dataclasses.replace(
            config.invariants, faults=tuple(config.invariants.faults) + tuple(args.fault)
        )
    return dataclasses.replace(config, **overrides)


def _run(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    report = run_experiment(config)
    if config.out:
        for path in emit_report(report, config.out):
            LOGGER.info("Wrote %s", path)
    print(json.dumps(report.summary(), indent=2, sort_keys=True))
    if isinstance(report, InvariantSummary):
        return 0 if report.passed else 1
    return 0


def _signature(args: argparse.Namespace) -> int:
    path = load_path_csv(args.path)
    result = signature_of_path(path, path.start, path.end, args.degree)
    print(json.dumps({f"level_{n}": level.tolist() for n, level in enumerate(result.levels)}))
    return 0


def _variation(args: argparse.Namespace) -> int:
    path = load_path_csv(args.path)
    mf = MultiplicativeFunctional.from_path(path, args.levels)
    values = {f"level_{n}": p_variation_level(mf, n, args.p) for n in range(1, args.levels + 1)}
    print(json.dumps(values))
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "signature":
            return _signature(args)
        if args.command == "variation":
            return _variation(args)
        return _run(args)
    except (OSError, ValueError) as error:
        LOGGER.error("%s", error)
        print(f"error: {error}", file=sys.stderr)
        return 2

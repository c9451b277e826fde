import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from logic.errors import InvalidInputError, SchemeError
from logic.experiments import (EXIT_INVALID, EXIT_VIOLATION, CommandResult, ExperimentConfig, cmd_compare,
                               cmd_converge, cmd_simulate, cmd_verify)
from ui.styles import summary_card

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "converge", "compare", "verify")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obstacle-spde",
        description="Penalized finite-difference solver for obstacle problems of quasilinear SPDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="KEY=VALUE experiment file (defaults apply when omitted)")
        if name == "compare":
            p.add_argument("--config-prime", required=True, help="config of the second problem")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--paths", type=int, help="override the path count")
        p.add_argument("--out", help="output directory")
        p.add_argument("--emit-plots", action="store_true", help="write gnuplot scripts next to the CSVs")
        p.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def _load(path: Optional[str], args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(path) if path else ExperimentConfig()
    logger.info("config loaded: %s", path or "defaults")
    return config.with_overrides(
        seed=args.seed,
        paths=args.paths,
        output_dir=args.out,
        emit_plots=True if args.emit_plots else None,
    )


def run(args: argparse.Namespace) -> CommandResult:
    config = _load(args.config, args)
    if args.command == "simulate":
        return cmd_simulate(config)
    if args.command == "converge":
        return cmd_converge(config)
    if args.command == "compare":
        return cmd_compare(config, _load(args.config_prime, args))
    return cmd_verify(config)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    try:
        result = run(args)
    except InvalidInputError as e:
        logger.error("invalid input: %s", e)
        print(summary_card(args.command, {"error": str(e)}, EXIT_INVALID))
        return EXIT_INVALID
    except SchemeError as e:
        logger.error("scheme failure: %s", e)
        print(summary_card(args.command, {"error": str(e)}, EXIT_VIOLATION))
        return EXIT_VIOLATION
    print(summary_card(args.command, {**result.summary, "output": str(result.output_dir)}, result.exit_code))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())

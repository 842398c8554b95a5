import argparse
import asyncio
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from gridedge.config import ExperimentConfigLoader
from gridedge.experiment import ExperimentRunner
from gridedge.shared.constants import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK
from gridedge.shared.exceptions import (
    BadParameter,
    ConfigError,
    DataIOError,
    GridEdgeException,
)


logger = logging.getLogger("gridedge")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: int = logging.INFO) -> None:
    # Keep third-party libraries at WARNING
    logging.basicConfig(level=logging.WARN, format=LOG_FORMAT)

    target_logger = logging.getLogger("gridedge")
    target_logger.setLevel(level)
    if not target_logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        target_logger.addHandler(handler)
    for handler in target_logger.handlers:
        handler.setLevel(level)

    target_logger.propagate = False


def _log_level(verbose: bool) -> int:
    if verbose:
        return logging.DEBUG
    name = os.getenv("GRIDEDGE_LOG_LEVEL", "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridedge",
        description="Load recovery experiments from smart-meter and D-PMU data",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c", "--config", required=True, help="Path to the experiment config file"
    )
    common.add_argument("--seed", type=int, help="Override scenario.seed")
    common.add_argument("--out", help="Output root directory (default: config output)")
    common.add_argument("--mode", choices=["full", "rank1"], help="Override recovery.mode")
    common.add_argument("--kappa", type=int, help="Number of feeder sensors used")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("synth", parents=[common], help="Synthesize truth and measurements")

    recover = commands.add_parser("recover", parents=[common], help="Recover load profiles")
    recover.add_argument("--measurements", help="Measurement directory (default: <out>/synth/measurements)")

    evaluate = commands.add_parser("evaluate", parents=[common], help="Score a recovery")
    evaluate.add_argument("--solution", help="Solution directory (default: <out>/recover)")
    evaluate.add_argument("--truth", help="Ground-truth directory (default: <out>/synth/truth if present)")
    evaluate.add_argument("--measurements", help="Measurement directory (default: <out>/synth/measurements)")

    sweep = commands.add_parser("sweep", parents=[common], help="Run a lambda or kappa grid")
    sweep.add_argument("--workers", type=int, default=1, help="Concurrent recoveries")

    commands.add_parser("feeder", parents=[common], help="Export the feeder as a JSON file")
    return parser


def exit_code(error: Exception) -> int:
    if isinstance(error, (ConfigError, BadParameter)):
        return EXIT_CONFIG
    if isinstance(error, DataIOError):
        return EXIT_IO
    # NumericalError and the remaining core failures
    return EXIT_NUMERICAL


async def main(args: argparse.Namespace) -> int:
    if args.kappa is not None and args.kappa < 0:
        raise ConfigError(f"--kappa must be nonnegative, got {args.kappa}")
    config = ExperimentConfigLoader(args.config).load()
    config = config.with_overrides(seed=args.seed, out=args.out, mode=args.mode, kappa=args.kappa)
    runner = ExperimentRunner(config)

    if args.command == "synth":
        runner.synth()
    elif args.command == "recover":
        runner.recover(args.measurements)
    elif args.command == "evaluate":
        runner.evaluate(args.solution, args.truth, args.measurements)
    elif args.command == "sweep":
        await runner.sweep(args.workers)
    elif args.command == "feeder":
        runner.export_feeder()
    return EXIT_OK


def run(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(_log_level(args.verbose))
    try:
        code = asyncio.run(main(args))
    except GridEdgeException as e:
        logger.error(f"{args.command} failed: {e}")
        code = exit_code(e)
    except Exception:
        logger.exception(f"{args.command} failed unexpectedly")
        code = EXIT_NUMERICAL
    return code


if __name__ == "__main__":
    sys.exit(run())

"""
Command-line entry: parser construction and exit-code mapping.

Exit codes: 0 success, 1 engine error (one line on stderr), 2 unexpected failure.
"""

import argparse
import sys
from typing import List, Optional

from loguru import logger

from app.cli.commands import evaluate, generate, ingest, pipeline, recommend, stages, sweep
from app.exceptions import KGEPError


LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)


def configure_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, format=LOG_FORMAT, level=level)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgep",
        description="Knowledge-graph embedding propagation for app recommendation",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in (ingest, stages, evaluate, recommend, generate, pipeline, sweep):
        module.register(subparsers)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except KGEPError as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(f"error: {e}\n")
        return 1
    except ValueError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except Exception as e:
        logger.exception(f"Unexpected failure in {args.command}: {e}")
        sys.stderr.write(f"internal error: {e}\n")
        return 2

"""
Shared CLI plumbing: common flags and service construction.
"""

import argparse
from typing import List

from app.config import EngineConfig, load_engine_config, settings
from app.services.pipeline import PipelineService


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON engine config (defaults apply when omitted)")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.FIELD=VALUE",
        help="override one config field, repeatable",
    )
    parser.add_argument("--workdir", default=settings.WORK_DIR, help="directory holding all stage artifacts")
    parser.add_argument("--threads", type=int, default=settings.THREADS, help="evaluation worker threads")


def add_force_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--force", action="store_true", help="rerun even when the stage is cached")


def engine_config(args: argparse.Namespace, extra: List[str] = ()) -> EngineConfig:
    return load_engine_config(args.config, list(args.overrides) + list(extra))


def pipeline_for(args: argparse.Namespace, extra: List[str] = ()) -> PipelineService:
    return PipelineService(args.workdir, engine_config(args, extra), threads=args.threads)


def csv_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]

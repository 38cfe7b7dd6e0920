"""
ingest: validate, cold-start filter and split the raw dataset.
"""

import argparse
import sys

from app.cli.common import add_common_arguments, add_force_argument, pipeline_for


def register(subparsers) -> None:
    parser = subparsers.add_parser("ingest", help="load, filter and split apps.csv / ratings.csv")
    add_common_arguments(parser)
    add_force_argument(parser)
    parser.add_argument("--apps", required=True, help="apps.csv")
    parser.add_argument("--ratings", required=True, help="ratings.csv")
    parser.set_defaults(func=cmd_ingest)


def cmd_ingest(args: argparse.Namespace) -> None:
    pipeline = pipeline_for(args)
    record = pipeline.ingest(args.apps, args.ratings, force=args.force)
    with open(pipeline.path(record.artifacts["stats"]), "r", encoding="utf-8") as f:
        sys.stdout.write(f.read())

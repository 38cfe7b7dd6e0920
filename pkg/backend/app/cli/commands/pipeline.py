"""
pipeline: every stage in order with manifest-based skipping.
"""

import argparse
import sys

from app.cli.common import add_common_arguments, add_force_argument, pipeline_for
from app.services.evaluation import format_report, read_report, write_report


def register(subparsers) -> None:
    parser = subparsers.add_parser("pipeline", help="run ingest → topics → KG → TransD → KGEP → evaluate")
    add_common_arguments(parser)
    add_force_argument(parser)
    parser.add_argument("--apps", help="apps.csv (omit both inputs to use the synthetic generator)")
    parser.add_argument("--ratings", help="ratings.csv")
    parser.add_argument("--out", help="also write report.tsv here")
    parser.set_defaults(func=cmd_pipeline)


def cmd_pipeline(args: argparse.Namespace) -> None:
    if bool(args.apps) != bool(args.ratings):
        raise ValueError("--apps and --ratings must be given together")
    pipeline = pipeline_for(args)
    records = pipeline.run_all(args.apps, args.ratings, force=args.force)
    report = read_report(pipeline.path(records[-1].artifacts["report"]))
    if args.out:
        write_report(report, args.out)
    sys.stdout.write(format_report(report))

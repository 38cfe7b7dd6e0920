"""
evaluate: Precision / Recall / MAP@K of each model on the test partition.
"""

import argparse
import json
import sys

from app.cli.common import add_common_arguments, add_force_argument, csv_list, pipeline_for
from app.services.evaluation import format_report, read_report


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="compare recommenders on the test partition")
    add_common_arguments(parser)
    add_force_argument(parser)
    parser.add_argument("--models", help="comma-separated subset of kgep,usercf,popularity,transd")
    parser.add_argument("--ks", help="comma-separated cut-offs, e.g. 10,20,30,40")
    parser.add_argument("--out", help="also write report.tsv here")
    parser.set_defaults(func=cmd_evaluate)


def evaluation_overrides(args: argparse.Namespace):
    extra = []
    if args.models:
        extra.append(f"evaluation.models={json.dumps(csv_list(args.models))}")
    if args.ks:
        extra.append(f"evaluation.ks={json.dumps([int(k) for k in csv_list(args.ks)])}")
    return extra


def cmd_evaluate(args: argparse.Namespace) -> None:
    pipeline = pipeline_for(args, evaluation_overrides(args))
    record = pipeline.evaluate(force=args.force, out_path=args.out)
    sys.stdout.write(format_report(read_report(pipeline.path(record.artifacts["report"]))))

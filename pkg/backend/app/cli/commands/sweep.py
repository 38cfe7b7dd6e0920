"""
sweep: retrain KGEP over a grid of one kgep hyperparameter.
"""

import argparse
import sys

from app.cli.common import add_common_arguments, csv_list, pipeline_for


def register(subparsers) -> None:
    parser = subparsers.add_parser("sweep", help="sensitivity of KGEP to one kgep.* setting")
    add_common_arguments(parser)
    parser.add_argument("--param", required=True, help="kgep field, e.g. propagation_layers")
    parser.add_argument("--values", required=True, help="comma-separated JSON values, e.g. 0,1,2")
    parser.set_defaults(func=cmd_sweep)


def cmd_sweep(args: argparse.Namespace) -> None:
    pipeline = pipeline_for(args)
    rows = pipeline.sweep(args.param, csv_list(args.values))
    sys.stdout.write("param\tvalue\tK\tprecision\trecall\tmap\n")
    for row in rows:
        sys.stdout.write(
            f"{row.param}\t{row.value}\t{row.k}\t{row.precision:.6f}\t{row.recall:.6f}\t{row.map:.6f}\n"
        )

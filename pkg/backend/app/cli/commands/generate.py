"""
generate: write the planted-cluster synthetic dataset.
"""

import argparse
import sys

from app.cli.common import add_common_arguments, add_force_argument, engine_config, pipeline_for
from app.services.ingestion import ingestion_service
from app.services.synthetic import generate_synthetic


def register(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="generate a synthetic two-cluster dataset")
    add_common_arguments(parser)
    add_force_argument(parser)
    parser.add_argument("--apps-out", help="write apps.csv here instead of the work directory")
    parser.add_argument("--ratings-out", help="write ratings.csv here instead of the work directory")
    parser.set_defaults(func=cmd_generate)


def cmd_generate(args: argparse.Namespace) -> None:
    if args.apps_out or args.ratings_out:
        if not (args.apps_out and args.ratings_out):
            raise ValueError("--apps-out and --ratings-out must be given together")
        config = engine_config(args)
        dataset = generate_synthetic(config.synthetic, config.rng_seed)
        ingestion_service.write_dataset(dataset, args.apps_out, args.ratings_out)
        sys.stdout.write(f"{args.apps_out}\n{args.ratings_out}\n")
        return

    pipeline = pipeline_for(args)
    record = pipeline.generate(force=args.force)
    for name in ("apps", "ratings"):
        sys.stdout.write(pipeline.path(record.artifacts[name]) + "\n")

"""
build-topics / build-kg / train-transd / train-kgep: one stage each.
"""

import argparse
import sys

from app.cli.common import add_common_arguments, add_force_argument, pipeline_for


STAGES = {
    "build-topics": ("fit LDA on the readme corpus and assign Content-Topics", "build_topics"),
    "build-kg": ("materialize the app recommendation knowledge graph", "build_kg"),
    "train-transd": ("train the TransD general embedding", "train_transd"),
    "train-kgep": ("train the propagation side of the recommender", "train_kgep"),
}


def register(subparsers) -> None:
    for name, (help_text, method) in STAGES.items():
        parser = subparsers.add_parser(name, help=help_text)
        add_common_arguments(parser)
        add_force_argument(parser)
        parser.set_defaults(func=cmd_stage, stage_method=method)


def cmd_stage(args: argparse.Namespace) -> None:
    pipeline = pipeline_for(args)
    record = getattr(pipeline, args.stage_method)(force=args.force)
    for name, path in sorted(record.artifacts.items()):
        sys.stdout.write(f"{name}\t{pipeline.path(path)}\n")

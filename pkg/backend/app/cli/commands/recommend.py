"""
recommend: top-K apps for one user as TSV (rank, app_id, score).
"""

import argparse
import os
import sys

from app.cli.common import add_common_arguments, pipeline_for


def register(subparsers) -> None:
    parser = subparsers.add_parser("recommend", help="top-K recommendations for one user")
    add_common_arguments(parser)
    parser.add_argument("--user", required=True, help="user id as it appears in ratings.csv")
    parser.add_argument("--k", type=int, default=10, help="list length")
    parser.add_argument("--include-train", action="store_true", help="keep the user's training apps")
    parser.add_argument("--out", help="write the TSV here instead of stdout")
    parser.set_defaults(func=cmd_recommend)


def cmd_recommend(args: argparse.Namespace) -> None:
    if args.k < 1:
        raise ValueError("--k must be >= 1")
    pipeline = pipeline_for(args)
    recommendations = pipeline.recommend(args.user, args.k, exclude_train=not args.include_train)
    lines = ["rank\tapp_id\tscore"]
    lines += [f"{r.rank}\t{r.app_id}\t{r.score:.6f}" for r in recommendations]
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)

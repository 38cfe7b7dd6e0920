"""
Dataset ingestion service.

Handles:
- Parsing apps.csv / ratings.csv into validated records
- Skip report for unknown app references and duplicate ratings
- Cold-start filtering (apps first, then users; exactly two passes)
- Rating matrix construction and sparsity statistics
"""

import csv
import os
from collections import Counter
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError
from scipy import sparse

from app.exceptions import DatasetValidationError, EmptyDatasetError
from app.models.matrix import RatingMatrix
from app.models.schemas import (
    AppRecord,
    Dataset,
    DatasetStats,
    RatingRecord,
    SkippedRow,
)


APP_COLUMNS = [
    "app_id", "category", "provider", "content_rating", "has_ads", "is_free",
    "interactive_elements", "avg_rating", "install_count", "updated_date",
    "size_bytes", "readme_text",
]
RATING_COLUMNS = ["user_id", "app_id", "rating"]


def _read_table(path: str, columns: List[str]) -> List[Tuple[int, Dict[str, str]]]:
    """
    Read a CSV file into (line, row) pairs.

    `line` is the physical line a record starts on, with the header on line 1.
    Quoted fields may contain newlines, so a record can span several lines.
    """
    if not os.path.exists(path):
        raise DatasetValidationError(path, 0, "<file>", "file does not exist")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DatasetValidationError(path, 1, missing[0], "column missing from header")

    spans = np.array(
        [sum(value.count("\n") for value in row) for row in frame.itertuples(index=False)],
        dtype=np.int64,
    )
    lines = 2 + np.arange(len(spans)) + np.cumsum(spans) - spans
    return list(zip(lines.tolist(), frame[columns].to_dict("records")))


def _validation_failure(path: str, line: int, error: ValidationError) -> DatasetValidationError:
    first = error.errors()[0]
    field = str(first["loc"][0]) if first.get("loc") else "<row>"
    return DatasetValidationError(path, line, field, first["msg"])


def _format_grade(grade: float) -> str:
    return f"{grade:.1f}"


class IngestionService:
    """Parses, validates, filters and indexes user/app side information"""

    def load_dataset(self, apps_path: str, ratings_path: str) -> Dataset:
        """
        Parse and validate both input files.

        Line numbers are physical lines with the header on line 1; a record
        whose quoted readme spans lines is reported at its first line.
        Malformed rows are fatal; ratings that reference unknown apps and
        duplicate (user, app) ratings are recorded in the skip report.
        """
        logger.info(f"Loading dataset: apps={apps_path}, ratings={ratings_path}")

        apps: List[AppRecord] = []
        seen_apps: Dict[str, int] = {}
        for line, row in _read_table(apps_path, APP_COLUMNS):
            try:
                record = AppRecord.model_validate(row)
            except ValidationError as e:
                raise _validation_failure(apps_path, line, e) from e
            if record.app_id in seen_apps:
                raise DatasetValidationError(
                    apps_path, line, "app_id",
                    f"duplicate app id {record.app_id!r} (first seen on line {seen_apps[record.app_id]})",
                )
            seen_apps[record.app_id] = line
            apps.append(record)

        skipped: List[SkippedRow] = []
        ratings: Dict[Tuple[str, str], RatingRecord] = {}
        first_line: Dict[Tuple[str, str], int] = {}
        for line, row in _read_table(ratings_path, RATING_COLUMNS):
            try:
                record = RatingRecord.model_validate(row)
            except ValidationError as e:
                raise _validation_failure(ratings_path, line, e) from e
            if record.app_id not in seen_apps:
                skipped.append(SkippedRow(
                    file=ratings_path, line=line, reason="unknown_app",
                    detail=f"app id {record.app_id!r} not in {os.path.basename(apps_path)}",
                ))
                continue
            key = (record.user_id, record.app_id)
            if key in ratings:
                # last occurrence wins
                skipped.append(SkippedRow(
                    file=ratings_path, line=first_line[key], reason="duplicate_rating",
                    detail=f"({record.user_id}, {record.app_id}) overridden by line {line}",
                ))
            first_line[key] = line
            ratings[key] = record

        if skipped:
            logger.warning(f"Skipped {len(skipped)} rating rows (see skip report)")
        logger.info(f"Loaded {len(apps)} apps and {len(ratings)} ratings")
        return Dataset(apps=apps, ratings=list(ratings.values()), skipped=skipped)

    def write_dataset(self, dataset: Dataset, apps_path: str, ratings_path: str) -> None:
        """Write both files in the same CSV dialect load_dataset reads"""
        for path in (apps_path, ratings_path):
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

        app_rows = [
            {
                "app_id": a.app_id,
                "category": a.category,
                "provider": a.provider,
                "content_rating": a.content_rating,
                "has_ads": "true" if a.has_ads else "false",
                "is_free": "true" if a.is_free else "false",
                "interactive_elements": ";".join(a.interactive_elements),
                "avg_rating": repr(float(a.avg_rating)),
                "install_count": str(a.install_count),
                "updated_date": a.updated_date.isoformat(),
                "size_bytes": str(a.size_bytes),
                "readme_text": a.readme_text,
            }
            for a in dataset.apps
        ]
        pd.DataFrame(app_rows, columns=APP_COLUMNS).to_csv(
            apps_path, index=False, quoting=csv.QUOTE_MINIMAL, lineterminator="\n", encoding="utf-8"
        )

        rating_rows = [
            {"user_id": r.user_id, "app_id": r.app_id, "rating": _format_grade(r.rating)}
            for r in dataset.ratings
        ]
        pd.DataFrame(rating_rows, columns=RATING_COLUMNS).to_csv(
            ratings_path, index=False, quoting=csv.QUOTE_MINIMAL, lineterminator="\n", encoding="utf-8"
        )
        logger.info(f"Wrote {len(app_rows)} apps → {apps_path}, {len(rating_rows)} ratings → {ratings_path}")

    def filter_cold_start(
        self,
        apps: Sequence[AppRecord],
        ratings: Sequence[RatingRecord],
        min_user: int,
        min_app: int,
    ) -> Tuple[List[AppRecord], List[RatingRecord]]:
        """
        Drop apps with fewer than `min_app` raters, then users with fewer than
        `min_user` remaining apps. Exactly one pass each, in that order.

        Apps whose raters were all removed by the user pass are dropped too so
        the app list stays aligned with the rating matrix.
        """
        if min_user < 1 or min_app < 1:
            raise ValueError("cold-start thresholds must be >= 1")

        app_raters = Counter(r.app_id for r in ratings)
        kept_apps = {a.app_id for a in apps if app_raters[a.app_id] >= min_app}
        after_apps = [r for r in ratings if r.app_id in kept_apps]

        user_apps = Counter(r.user_id for r in after_apps)
        kept_users = {u for u, n in user_apps.items() if n >= min_user}
        after_users = [r for r in after_apps if r.user_id in kept_users]

        rated = {r.app_id for r in after_users}
        apps_out = [a for a in apps if a.app_id in kept_apps and a.app_id in rated]

        logger.info(
            f"Cold-start filter: apps {len(apps)} → {len(apps_out)}, "
            f"users {len({r.user_id for r in ratings})} → {len(kept_users)}, "
            f"ratings {len(ratings)} → {len(after_users)}"
        )
        if not apps_out or not after_users:
            raise EmptyDatasetError("dataset empty after cold-start filtering")
        return apps_out, after_users

    def second_pass_would_change(
        self,
        apps: Sequence[AppRecord],
        ratings: Sequence[RatingRecord],
        min_user: int,
        min_app: int,
    ) -> bool:
        """Whether re-applying the filter to its own output would remove anything"""
        try:
            apps2, ratings2 = self.filter_cold_start(apps, ratings, min_user, min_app)
        except EmptyDatasetError:
            return True
        changed = len(apps2) != len(apps) or len(ratings2) != len(ratings)
        if changed:
            logger.warning("A second cold-start pass would remove more rows; the two-pass result is kept")
        return changed

    def build_rating_matrix(self, ratings: Sequence[RatingRecord]) -> RatingMatrix:
        """Sparse matrix with users and apps sorted lexicographically by id"""
        users = tuple(sorted({r.user_id for r in ratings}))
        apps = tuple(sorted({r.app_id for r in ratings}))
        u_idx = {u: i for i, u in enumerate(users)}
        a_idx = {a: i for i, a in enumerate(apps)}

        rows = np.fromiter((u_idx[r.user_id] for r in ratings), dtype=np.int64, count=len(ratings))
        cols = np.fromiter((a_idx[r.app_id] for r in ratings), dtype=np.int64, count=len(ratings))
        data = np.fromiter((r.rating for r in ratings), dtype=np.float64, count=len(ratings))
        if len(set(zip(rows.tolist(), cols.tolist()))) != len(ratings):
            raise ValueError("duplicate (user, app) ratings must be resolved during ingestion")

        values = sparse.csr_matrix((data, (rows, cols)), shape=(len(users), len(apps)))
        values.sort_indices()
        matrix = RatingMatrix(users=users, apps=apps, values=values)
        logger.info(f"Built rating matrix {matrix.shape} with {matrix.n_entries} entries "
                    f"(sparsity {matrix.sparsity:.5%})")
        return matrix

    def dataset_stats(self, matrix: RatingMatrix, second_pass_changes: bool = False, skipped: int = 0) -> DatasetStats:
        return DatasetStats(
            users=len(matrix.users),
            apps=len(matrix.apps),
            ratings=matrix.n_entries,
            sparsity=matrix.sparsity,
            cold_start_second_pass_changes=second_pass_changes,
            skipped_rows=skipped,
        )


ingestion_service = IngestionService()

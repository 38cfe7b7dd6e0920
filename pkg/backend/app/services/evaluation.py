"""
Top-K evaluation harness.

Handles:
- Per-user 70/10/20 interaction split
- Precision@K, Recall@K and AP@K (denominator min(K, |relevant|))
- UserCF and popularity baselines, KGEP and direct-TransD rankers
- Per-user evaluation on a thread pool with order-independent averages
- Report / sweep TSV output
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from loguru import logger
from scipy import sparse

from app.db.triple_store import KnowledgeGraph
from app.exceptions import UnknownEntityError
from app.models.matrix import RatingMatrix
from app.models.schemas import EntityKind, MetricReport, MetricRow, RelationKind, SweepRow
from app.services.kg_construct import entity_label
from app.services.recommender import KGEPModel, rank_candidates
from app.services.transd import TransDParams, triple_energy


# (user index, excluded app indices, K) -> app indices, best first
Ranker = Callable[[int, Set[int], int], List[int]]


# ===== SPLIT =====

@dataclass(frozen=True)
class InteractionSplit:
    """Disjoint per-user train / validation / test partitions over shared axes"""
    train: RatingMatrix
    validation: RatingMatrix
    test: RatingMatrix
    seed: int


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_counts(n: int, train_fraction: float = 0.7, validation_fraction: float = 0.1) -> Tuple[int, int, int]:
    """(n_train, n_val, n_test) for a user with n interactions"""
    if n < 3:
        raise ValueError(f"a user needs at least 3 interactions to populate every partition, got {n}")
    n_train = max(1, _round_half_up(train_fraction * n))
    n_val = _round_half_up(validation_fraction * n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_interactions(
    matrix: RatingMatrix,
    seed: int,
    train_fraction: float = 0.7,
    validation_fraction: float = 0.1,
) -> InteractionSplit:
    """
    Shuffle each user's apps with one seeded RNG (users in sorted order) and
    cut them into train / validation / test.
    """
    rng = np.random.default_rng(seed)
    parts: Dict[str, List[Tuple[int, int]]] = {"train": [], "validation": [], "test": []}
    for u in range(len(matrix.users)):
        items = matrix.items_of(u)
        try:
            n_train, n_val, _ = split_counts(len(items), train_fraction, validation_fraction)
        except ValueError as e:
            raise ValueError(f"user {matrix.users[u]!r}: {e}") from None
        shuffled = items[rng.permutation(len(items))]
        parts["train"] += [(u, int(a)) for a in shuffled[:n_train]]
        parts["validation"] += [(u, int(a)) for a in shuffled[n_train:n_train + n_val]]
        parts["test"] += [(u, int(a)) for a in shuffled[n_train + n_val:]]

    split = InteractionSplit(
        train=matrix.restrict(parts["train"]),
        validation=matrix.restrict(parts["validation"]),
        test=matrix.restrict(parts["test"]),
        seed=seed,
    )
    logger.info(
        f"Split {matrix.n_entries} interactions: train={split.train.n_entries}, "
        f"validation={split.validation.n_entries}, test={split.test.n_entries}"
    )
    return split


# ===== METRICS =====

def _check_ranking(ranked: Sequence[int], k: int) -> None:
    if k < 1:
        raise ValueError("K must be >= 1")
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicates")


def precision_recall_at_k(ranked: Sequence[int], relevant: Set[int], k: int) -> Tuple[float, float]:
    """
    Returns:
        (hits / K, hits / |relevant|); recall is NaN when relevant is empty
    """
    _check_ranking(ranked, k)
    hits = sum(1 for item in list(ranked)[:k] if item in relevant)
    recall = hits / len(relevant) if relevant else float("nan")
    return hits / k, recall


def map_at_k(ranked: Sequence[int], relevant: Set[int], k: int) -> float:
    """AP@K: sum of precision@i at each hit i <= K, over min(K, |relevant|)"""
    _check_ranking(ranked, k)
    if not relevant:
        return float("nan")
    hits = 0
    total = 0.0
    for i, item in enumerate(list(ranked)[:k], start=1):
        if item in relevant:
            hits += 1
            total += hits / i
    return total / min(k, len(relevant))


# ===== BASELINES =====

def _exclusion(matrix_train: RatingMatrix, u: int, exclude: Optional[Set[int]]) -> Set[int]:
    return set(matrix_train.items_of(u).tolist()) if exclude is None else exclude


def popularity_recommend(
    matrix_train: RatingMatrix,
    u: int,
    k: int,
    exclude: Optional[Set[int]] = None,
) -> List[int]:
    """Apps by training interaction count; u's training positives excluded by default"""
    counts = matrix_train.item_counts().astype(np.float64)
    apps = np.arange(len(matrix_train.apps))
    ranked = rank_candidates(apps, counts, k, _exclusion(matrix_train, u, exclude))
    return [a for a, _ in ranked]


def usercf_recommend(
    matrix_train: RatingMatrix,
    similarity: sparse.spmatrix,
    u: int,
    k: int,
    exclude: Optional[Set[int]] = None,
    neighbors: Optional[int] = None,
) -> List[int]:
    """
    score(u, a) = sum over j != u with sim(u, j) >= 0 of sim(u, j) * r_ja.

    Args:
        matrix_train: training ratings
        similarity: user-user Tanimoto matrix of the training data
        u: user index
        k: list length
        exclude: app indices to drop (default: u's training positives)
        neighbors: keep only the top-N most similar users (None = all)
    """
    sim = np.asarray(similarity[u].todense()).ravel().astype(np.float64)
    sim[u] = 0.0
    sim[sim < 0] = 0.0
    if neighbors is not None and np.count_nonzero(sim) > neighbors:
        order = np.lexsort((np.arange(len(sim)), -sim))
        sim[order[neighbors:]] = 0.0
    scores = np.asarray(matrix_train.values.T @ sim).ravel()
    apps = np.arange(len(matrix_train.apps))
    ranked = rank_candidates(apps, scores, k, _exclusion(matrix_train, u, exclude))
    return [a for a, _ in ranked]


# ===== RANKERS =====

class EntityAxes:
    """Maps rating-matrix indices to knowledge-graph entity ids and back"""

    def __init__(self, kg: KnowledgeGraph, matrix: RatingMatrix):
        try:
            self.user_entity = np.array(
                [kg.entity_id(entity_label(EntityKind.USER, u)) for u in matrix.users], dtype=np.int64,
            )
            self.app_entity = np.array(
                [kg.entity_id(entity_label(EntityKind.APP, a)) for a in matrix.apps], dtype=np.int64,
            )
        except UnknownEntityError as e:
            logger.error(f"Rating matrix does not match the knowledge graph: {e}")
            raise
        self.app_index = {int(e): j for j, e in enumerate(self.app_entity)}

    def to_app_indices(self, entities: Sequence[int]) -> List[int]:
        return [self.app_index[int(e)] for e in entities]


def popularity_ranker(matrix_train: RatingMatrix) -> Ranker:
    return lambda u, exclude, k: popularity_recommend(matrix_train, u, k, exclude)


def usercf_ranker(matrix_train: RatingMatrix, similarity: sparse.spmatrix, neighbors: Optional[int] = None) -> Ranker:
    return lambda u, exclude, k: usercf_recommend(matrix_train, similarity, u, k, exclude, neighbors)


def kgep_ranker(model: KGEPModel, axes: EntityAxes) -> Ranker:
    def rank(u: int, exclude: Set[int], k: int) -> List[int]:
        scores = model.logits(int(axes.user_entity[u]), axes.app_entity)
        apps = np.arange(len(axes.app_entity))
        return [a for a, _ in rank_candidates(apps, scores, k, exclude)]
    return rank


def transd_ranker(transd: TransDParams, axes: EntityAxes) -> Ranker:
    """Apps ranked by the TransD energy g(u, INTERACT, a)"""
    interact = RelationKind.INTERACT.relation_id

    def rank(u: int, exclude: Set[int], k: int) -> List[int]:
        n = len(axes.app_entity)
        queries = np.column_stack([
            np.full(n, axes.user_entity[u]), np.full(n, interact), axes.app_entity,
        ])
        scores = triple_energy(transd, queries)
        return [a for a, _ in rank_candidates(np.arange(n), scores, k, exclude)]
    return rank


# ===== EVALUATION =====

def _user_metrics(
    ranker: Ranker,
    u: int,
    relevant: Set[int],
    exclude: Set[int],
    ks: Sequence[int],
) -> List[Tuple[float, float, float]]:
    ranked = ranker(u, exclude, max(ks))
    out = []
    for k in ks:
        precision, recall = precision_recall_at_k(ranked, relevant, k)
        out.append((precision, recall, map_at_k(ranked, relevant, k)))
    return out


def evaluate(
    rankers: Dict[str, Ranker],
    split: InteractionSplit,
    ks: Sequence[int] = (10, 20, 30, 40),
    threads: int = 1,
) -> MetricReport:
    """
    Average precision / recall / AP@K over users with a nonempty test set.

    Test rankings exclude each user's training and validation apps. Users
    are scored on `threads` workers; sums run in sorted user order so the
    result does not depend on the thread count.
    """
    ks = sorted(set(ks))
    train_sets = split.train.item_sets()
    val_sets = split.validation.item_sets()
    test_sets = split.test.item_sets()
    users = [u for u in range(len(split.test.users)) if test_sets[u]]
    if not users:
        raise ValueError("no user has a nonempty test set")

    rows = []
    for name, ranker in rankers.items():
        logger.info(f"Evaluating {name} on {len(users)} users (K={ks}, threads={threads})")
        jobs = [(u, test_sets[u], train_sets[u] | val_sets[u]) for u in users]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda job: _user_metrics(ranker, *job, ks), jobs))
        else:
            results = [_user_metrics(ranker, *job, ks) for job in jobs]

        for i, k in enumerate(ks):
            totals = np.zeros(3)
            for per_user in results:
                totals += per_user[i]
            precision, recall, ap = totals / len(users)
            rows.append(MetricRow(model=name, k=k, precision=precision, recall=recall, map=ap, users=len(users)))
            logger.info(f"{name} @{k}: precision={precision:.6f} recall={recall:.6f} map={ap:.6f}")
    return MetricReport(rows=rows)


def validation_map_callback(kg: KnowledgeGraph, split: InteractionSplit, k: int = 10) -> Callable[[KGEPModel], float]:
    """MAP@K on the validation partition (training apps excluded), for train_kgep"""
    axes = EntityAxes(kg, split.train)
    train_sets = split.train.item_sets()
    val_sets = split.validation.item_sets()
    users = [u for u in range(len(split.validation.users)) if val_sets[u]]

    def validate(model: KGEPModel) -> float:
        if not users:
            return 0.0
        ranker = kgep_ranker(model, axes)
        total = sum(map_at_k(ranker(u, train_sets[u], k), val_sets[u], k) for u in users)
        return total / len(users)
    return validate


# ===== REPORTS =====

REPORT_HEADER = "model\tK\tprecision\trecall\tmap"


def format_report(report: MetricReport) -> str:
    lines = [REPORT_HEADER]
    for row in report.rows:
        lines.append(f"{row.model}\t{row.k}\t{row.precision:.6f}\t{row.recall:.6f}\t{row.map:.6f}")
    return "\n".join(lines) + "\n"


def write_report(report: MetricReport, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_report(report))
    logger.info(f"Wrote report to {path}")


def read_report(path: str) -> MetricReport:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != REPORT_HEADER:
            raise ValueError(f"{path}: unexpected report header {header!r}")
        for line in f:
            if not line.strip():
                continue
            model, k, precision, recall, ap = line.rstrip("\n").split("\t")
            rows.append(MetricRow(
                model=model, k=int(k), precision=float(precision), recall=float(recall), map=float(ap), users=0,
            ))
    return MetricReport(rows=rows)


def write_sweep(rows: Sequence[SweepRow], path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("param\tvalue\tK\tprecision\trecall\tmap\n")
        for row in rows:
            f.write(f"{row.param}\t{row.value}\t{row.k}\t{row.precision:.6f}\t{row.recall:.6f}\t{row.map:.6f}\n")
    logger.info(f"Wrote sweep results to {path}")

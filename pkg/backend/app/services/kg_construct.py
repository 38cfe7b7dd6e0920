"""
ARKG construction service.

Handles:
- Discretizing app side information into attribute entities
- Tanimoto user similarity and Hellinger topic similarity relations
- Bucket-adjacency SIMILAR relations for ordinal attributes
- Assembling the signature-checked KnowledgeGraph from training data only
"""

from dataclasses import dataclass
from datetime import date
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
from loguru import logger
from scipy import sparse

from app.config import KGSection
from app.db.triple_store import ENTITY_KINDS, KnowledgeGraph
from app.models.matrix import RatingMatrix
from app.models.schemas import (
    SIZE_VARIES,
    AppRecord,
    EntityKind,
    RelationKind,
    Triple,
)
from app.services.topic_model import TopicModel
from app.utils.numeric import hellinger_distance_matrix, tanimoto, tanimoto_matrix


SimilarityMetric = Literal["tanimoto", "hellinger_sim", "hellinger_distance", "bucket_adjacency"]

ATTRIBUTE_RELATIONS: Dict[RelationKind, EntityKind] = {
    RelationKind.HAVINGC: EntityKind.CATEGORY,
    RelationKind.OFFEREDBY: EntityKind.PROVIDER,
    RelationKind.CONTENTR: EntityKind.AGE_RESTRICTION,
    RelationKind.HAVINGA: EntityKind.ADS,
    RelationKind.HAVINGF: EntityKind.FEE,
    RelationKind.HAVINGQ: EntityKind.QUALITY,
    RelationKind.HAVINGP: EntityKind.POPULARITY,
    RelationKind.HAVINGUT: EntityKind.UPDATED_TIME,
    RelationKind.HAVINGS: EntityKind.SIZE,
}

# Ordinal attribute kind -> its adjacency relation
ADJACENCY_RELATIONS: Dict[EntityKind, RelationKind] = {
    EntityKind.QUALITY: RelationKind.QSIMILAR,
    EntityKind.POPULARITY: RelationKind.PSIMILAR,
    EntityKind.UPDATED_TIME: RelationKind.UTSIMILAR,
    EntityKind.SIZE: RelationKind.SSIMILAR,
}

_LABEL_PREFIX = {
    EntityKind.USER: "user",
    EntityKind.APP: "app",
    EntityKind.CONTENT_TOPIC: "topic",
    EntityKind.CATEGORY: "category",
    EntityKind.PROVIDER: "provider",
    EntityKind.POPULARITY: "popularity",
    EntityKind.AGE_RESTRICTION: "age",
    EntityKind.ADS: "ads",
    EntityKind.FEE: "fee",
    EntityKind.INTERACTIVE_ELEMENTS: "element",
    EntityKind.QUALITY: "quality",
    EntityKind.UPDATED_TIME: "updated",
    EntityKind.SIZE: "size",
}


def entity_label(kind: EntityKind, value: Union[str, int]) -> str:
    """Globally unique label, e.g. "user:u17", "topic:3", "quality:4.5" """
    return f"{_LABEL_PREFIX[kind]}:{value}"


@dataclass(frozen=True)
class Bucket:
    """One attribute entity; ordinal is None for nominal values and the VARIES size"""
    kind: EntityKind
    value: str
    ordinal: Optional[int] = None

    @property
    def label(self) -> str:
        return entity_label(self.kind, self.value)


@dataclass(frozen=True)
class AppAttributes:
    app_id: str
    buckets: Dict[RelationKind, Bucket]
    interactive_elements: Tuple[str, ...]


# ===== BUCKETIZERS =====

def popularity_bucket(install_count: int) -> Bucket:
    """floor(log10(install_count + 1)), computed on integers"""
    b = len(str(install_count + 1)) - 1
    return Bucket(EntityKind.POPULARITY, str(b), b)


def quality_bucket(avg_rating: float) -> Bucket:
    """Nearest 0.5, halves rounding up: 11 buckets 0.0 .. 5.0"""
    halves = int(np.floor(avg_rating * 2.0 + 0.5))
    halves = min(max(halves, 0), 10)
    return Bucket(EntityKind.QUALITY, f"{halves / 2:.1f}", halves)


def updated_time_bucket(updated: date) -> Bucket:
    quarter = (updated.month - 1) // 3 + 1
    return Bucket(EntityKind.UPDATED_TIME, f"{updated.year}-Q{quarter}", updated.year * 4 + quarter - 1)


def size_bucket(size_bytes: Union[int, str]) -> Bucket:
    """floor(log2(size_bytes / 1MiB + 1)); "VARIES" gets its own non-ordinal bucket"""
    if size_bytes == SIZE_VARIES:
        return Bucket(EntityKind.SIZE, SIZE_VARIES, None)
    b = (int(size_bytes) + 2 ** 20).bit_length() - 1 - 20
    return Bucket(EntityKind.SIZE, str(b), b)


def bucketize_attributes(apps: Sequence[AppRecord]) -> List[AppAttributes]:
    """Map every app to exactly one bucket per attribute relation"""
    out = []
    for app in apps:
        buckets = {
            RelationKind.HAVINGC: Bucket(EntityKind.CATEGORY, app.category),
            RelationKind.OFFEREDBY: Bucket(EntityKind.PROVIDER, app.provider),
            RelationKind.CONTENTR: Bucket(EntityKind.AGE_RESTRICTION, app.content_rating),
            RelationKind.HAVINGA: Bucket(EntityKind.ADS, "yes" if app.has_ads else "no"),
            RelationKind.HAVINGF: Bucket(EntityKind.FEE, "free" if app.is_free else "paid"),
            RelationKind.HAVINGQ: quality_bucket(app.avg_rating),
            RelationKind.HAVINGP: popularity_bucket(app.install_count),
            RelationKind.HAVINGUT: updated_time_bucket(app.updated_date),
            RelationKind.HAVINGS: size_bucket(app.size_bytes),
        }
        out.append(AppAttributes(app.app_id, buckets, tuple(app.interactive_elements)))
    return out


# ===== SIMILARITY =====

def user_similarity(r_i, r_j) -> float:
    """Tanimoto coefficient of two rating vectors (dense or sparse rows)"""
    return tanimoto(r_i, r_j)


def _pairs_from_matrix(sim, threshold: float) -> np.ndarray:
    """(i, j) index pairs with sim >= threshold, i != j"""
    if sparse.issparse(sim):
        coo = sparse.coo_matrix(sim)
        keep = (coo.data >= threshold) & (coo.row != coo.col)
        return np.stack([coo.row[keep], coo.col[keep]], axis=1)
    mask = np.asarray(sim) >= threshold
    np.fill_diagonal(mask, False)
    return np.argwhere(mask)


def extract_similarity_relations(
    items: Sequence[Tuple[int, object]],
    threshold: float,
    metric: SimilarityMetric,
    relation: RelationKind,
) -> Set[Triple]:
    """
    Emit (i, R, j) and (j, R, i) for every unordered pair that qualifies.

    Args:
        items: (entity id, vector) pairs; vectors are rating rows for
            "tanimoto", topic-word distributions for the Hellinger metrics,
            and ordinal bucket positions (or None) for "bucket_adjacency"
        threshold: inclusive cut-off in (0, 1); ignored by bucket_adjacency
        metric: similarity function
        relation: the SIMILAR relation to emit

    Returns:
        Set of directed triples, never containing a self-pair
    """
    if metric not in ("tanimoto", "hellinger_sim", "hellinger_distance", "bucket_adjacency"):
        raise ValueError(f"unknown similarity metric {metric!r}")
    if metric != "bucket_adjacency" and not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if len(items) < 2:
        return set()

    ids = [entity for entity, _ in items]
    vectors = [vec for _, vec in items]

    if metric == "bucket_adjacency":
        by_ordinal: Dict[int, List[int]] = {}
        for entity, ordinal in zip(ids, vectors):
            if ordinal is not None:
                by_ordinal.setdefault(int(ordinal), []).append(entity)
        pairs = []
        for ordinal, heads in by_ordinal.items():
            for tail in by_ordinal.get(ordinal + 1, []):
                for head in heads:
                    pairs.append((head, tail))
        triples = set()
        for head, tail in pairs:
            triples.add(Triple(head=head, relation=relation, tail=tail))
            triples.add(Triple(head=tail, relation=relation, tail=head))
        return triples

    if metric == "tanimoto":
        if all(sparse.issparse(v) for v in vectors):
            stacked = sparse.vstack([sparse.csr_matrix(v) for v in vectors]).tocsr()
        else:
            stacked = sparse.csr_matrix(np.vstack([np.asarray(v, dtype=np.float64).ravel() for v in vectors]))
        sim = tanimoto_matrix(stacked)
    else:
        dist = hellinger_distance_matrix(np.vstack([np.asarray(v, dtype=np.float64) for v in vectors]))
        sim = 1.0 - dist if metric == "hellinger_sim" else dist

    triples = set()
    for i, j in _pairs_from_matrix(sim, threshold).tolist():
        triples.add(Triple(head=ids[i], relation=relation, tail=ids[j]))
    return triples


# ===== ASSEMBLY =====

def _bucket_sort_key(bucket: Bucket):
    ordinal = bucket.ordinal if bucket.ordinal is not None else np.iinfo(np.int64).max
    return (ENTITY_KINDS.index(bucket.kind), ordinal, bucket.value)


def build_arkg(
    apps: Sequence[AppRecord],
    ratings_train: RatingMatrix,
    topic_model: TopicModel,
    topic_assignment: Mapping[str, int],
    config: KGSection,
) -> KnowledgeGraph:
    """
    Materialize the ARKG.

    Entity ids: users (sorted), apps (sorted), topics 0..K-1, then attribute
    entities ordered by kind and bucket. Only the training partition feeds
    INTERACT and USIMILAR.

    Args:
        apps: filtered app records
        ratings_train: training interactions
        topic_model: fitted LDA model (phi rows are the Content-Topic entities)
        topic_assignment: app id -> topic index
        config: similarity thresholds

    Returns:
        The populated KnowledgeGraph
    """
    logger.info(f"Building ARKG from {len(apps)} apps and {ratings_train.n_entries} training interactions")
    kg = KnowledgeGraph()
    apps_sorted = sorted(apps, key=lambda a: a.app_id)
    attributes = bucketize_attributes(apps_sorted)

    user_ids = [kg.add_entity(EntityKind.USER, entity_label(EntityKind.USER, u)) for u in ratings_train.users]
    app_ids = {a.app_id: kg.add_entity(EntityKind.APP, entity_label(EntityKind.APP, a.app_id)) for a in apps_sorted}
    topic_ids = [
        kg.add_entity(EntityKind.CONTENT_TOPIC, entity_label(EntityKind.CONTENT_TOPIC, k))
        for k in range(topic_model.k_topics)
    ]

    buckets = {b for attr in attributes for b in attr.buckets.values()}
    buckets |= {
        Bucket(EntityKind.INTERACTIVE_ELEMENTS, element)
        for attr in attributes for element in attr.interactive_elements
    }
    bucket_ids = {b: kg.add_entity(b.kind, b.label) for b in sorted(buckets, key=_bucket_sort_key)}

    # INTERACT from the training partition only
    coo = ratings_train.values.tocoo()
    for u, a in sorted(zip(coo.row.tolist(), coo.col.tolist())):
        app_id = ratings_train.apps[a]
        if app_id not in app_ids:
            raise KeyError(f"training interaction references app {app_id!r} missing from the app table")
        kg.add_triple(user_ids[u], RelationKind.INTERACT, app_ids[app_id])

    for attr in attributes:
        head = app_ids[attr.app_id]
        if attr.app_id not in topic_assignment:
            raise KeyError(f"no Content-Topic assigned to app {attr.app_id!r}")
        kg.add_triple(head, RelationKind.HAVINGCT, topic_ids[int(topic_assignment[attr.app_id])])
        for relation, bucket in attr.buckets.items():
            kg.add_triple(head, relation, bucket_ids[bucket])
        for element in attr.interactive_elements:
            kg.add_triple(head, RelationKind.HAVINGIE, bucket_ids[Bucket(EntityKind.INTERACTIVE_ELEMENTS, element)])

    usimilar = extract_similarity_relations(
        [(user_ids[i], ratings_train.values[i]) for i in range(len(user_ids))],
        config.us, "tanimoto", RelationKind.USIMILAR,
    )
    ct_metric = "hellinger_sim" if config.ct_similarity_mode == "similarity" else "hellinger_distance"
    ctsimilar = extract_similarity_relations(
        [(topic_ids[k], topic_model.phi[k]) for k in range(topic_model.k_topics)],
        config.cts, ct_metric, RelationKind.CTSIMILAR,
    )
    kg.add_triples(sorted(usimilar, key=lambda t: t.as_tuple()))
    kg.add_triples(sorted(ctsimilar, key=lambda t: t.as_tuple()))

    for kind, relation in ADJACENCY_RELATIONS.items():
        items = [(entity, b.ordinal) for b, entity in bucket_ids.items() if b.kind == kind]
        adjacency = extract_similarity_relations(items, 0.5, "bucket_adjacency", relation)
        kg.add_triples(sorted(adjacency, key=lambda t: t.as_tuple()))

    stats = kg.get_stats()
    logger.info(f"ARKG built: {stats['total_entities']} entities, {stats['total_triples']} triples")
    logger.debug(f"Triples by relation: {stats['triples_by_relation']}")
    return kg


def topic_assignment_map(doc_ids: Sequence[str], assignment: np.ndarray) -> Dict[str, int]:
    return {doc: int(k) for doc, k in zip(doc_ids, assignment)}


def user_similarity_matrix(ratings_train: RatingMatrix) -> sparse.csr_matrix:
    """Training-data Tanimoto matrix, shared with the UserCF baseline"""
    return tanimoto_matrix(ratings_train.values)

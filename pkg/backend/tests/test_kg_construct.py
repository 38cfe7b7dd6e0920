"""
ARKG construction: bucketizers, similarity extraction, schema checks, persistence.
"""

from datetime import date

import numpy as np
import pytest

from app.config import KGSection
from app.db.triple_store import KnowledgeGraph
from app.exceptions import SchemaViolationError, UnknownEntityError
from app.models.schemas import (
    RELATION_SIGNATURES,
    SINGLE_VALUED_APP_RELATIONS,
    SIZE_VARIES,
    EntityKind,
    RelationKind,
)
from app.services.ingestion import ingestion_service
from app.services.kg_construct import (
    build_arkg,
    extract_similarity_relations,
    popularity_bucket,
    quality_bucket,
    size_bucket,
    updated_time_bucket,
)
from app.services.topic_model import TopicModel

from tests.conftest import make_app, make_rating


def one_topic_model(n_apps: int) -> TopicModel:
    return TopicModel(phi=np.array([[0.5, 0.5]]), theta=np.ones((n_apps, 1)), vocabulary=("a", "b"))


# ===== BUCKETIZERS =====

def test_quality_rounds_to_nearest_half_up():
    assert quality_bucket(4.26).value == "4.5"
    assert quality_bucket(4.24).value == "4.0"
    assert quality_bucket(4.25).value == "4.5"
    assert quality_bucket(0.0).value == "0.0"
    assert quality_bucket(5.0).value == "5.0"


def test_popularity_bucket_is_log10():
    assert popularity_bucket(0).ordinal == 0
    assert popularity_bucket(9).ordinal == 1
    assert popularity_bucket(999).ordinal == 3
    assert popularity_bucket(1_000_000).ordinal == 6


def test_updated_time_bucket_is_year_quarter():
    assert updated_time_bucket(date(2020, 5, 17)).value == "2020-Q2"
    assert updated_time_bucket(date(2020, 12, 31)).value == "2020-Q4"
    assert updated_time_bucket(date(2021, 1, 1)).ordinal == updated_time_bucket(date(2020, 12, 31)).ordinal + 1


def test_size_bucket_is_log2_mib_with_varies_sentinel():
    assert size_bucket(0).ordinal == 0
    assert size_bucket(2 ** 20).ordinal == 1
    assert size_bucket(3 * 2 ** 20).ordinal == 2
    varies = size_bucket(SIZE_VARIES)
    assert varies.ordinal is None
    assert varies.value == SIZE_VARIES


# ===== SIMILARITY EXTRACTION =====

def test_similar_pairs_emitted_in_both_directions():
    items = [(0, np.array([1.0, 1.0, 0.0])), (1, np.array([1.0, 1.0, 0.0])), (2, np.array([0.0, 0.0, 1.0]))]
    triples = extract_similarity_relations(items, 0.9, "tanimoto", RelationKind.USIMILAR)
    assert {(t.head, t.tail) for t in triples} == {(0, 1), (1, 0)}


def test_threshold_is_inclusive():
    # tanimoto((1,1),(1,0)) == 0.5
    items = [(0, np.array([1.0, 1.0])), (1, np.array([1.0, 0.0]))]
    assert len(extract_similarity_relations(items, 0.5, "tanimoto", RelationKind.USIMILAR)) == 2
    assert len(extract_similarity_relations(items, 0.51, "tanimoto", RelationKind.USIMILAR)) == 0


def test_three_identical_users_give_six_triples():
    row = np.array([0.2, 1.0, 0.0])
    items = [(i, row) for i in range(3)]
    triples = extract_similarity_relations(items, 0.98, "tanimoto", RelationKind.USIMILAR)
    assert len(triples) == 6
    assert all(t.head != t.tail for t in triples)


def test_single_item_has_no_similarity():
    assert extract_similarity_relations([(0, np.ones(2))], 0.5, "tanimoto", RelationKind.USIMILAR) == set()


def test_hellinger_similarity_on_topics():
    phi = [np.array([0.5, 0.5]), np.array([0.5, 0.5]), np.array([1.0, 0.0])]
    triples = extract_similarity_relations(list(enumerate(phi)), 0.9, "hellinger_sim", RelationKind.CTSIMILAR)
    assert {(t.head, t.tail) for t in triples} == {(0, 1), (1, 0)}


def test_bucket_adjacency_links_neighbouring_ordinals_only():
    items = [(10, 0), (11, 1), (12, 3), (13, None)]
    triples = extract_similarity_relations(items, 0.5, "bucket_adjacency", RelationKind.SSIMILAR)
    assert {(t.head, t.tail) for t in triples} == {(10, 11), (11, 10)}


def test_invalid_threshold_and_metric_raise():
    items = [(0, np.ones(2)), (1, np.ones(2))]
    with pytest.raises(ValueError):
        extract_similarity_relations(items, 1.0, "tanimoto", RelationKind.USIMILAR)
    with pytest.raises(ValueError):
        extract_similarity_relations(items, 0.5, "cosine", RelationKind.USIMILAR)


# ===== ASSEMBLY =====

def test_minimal_fixture_triple_set():
    app = make_app("a1", interactive_elements=("Shares Location", "Users Interact"))
    matrix = ingestion_service.build_rating_matrix([make_rating("u1", "a1", 0.8)])

    kg = build_arkg([app], matrix, one_topic_model(1), {"a1": 0}, KGSection())

    stats = kg.get_stats()["triples_by_relation"]
    assert kg.n_triples == 1 + 10 + 2
    assert stats[RelationKind.INTERACT.value] == 1
    assert stats[RelationKind.HAVINGIE.value] == 2
    for relation in SINGLE_VALUED_APP_RELATIONS:
        assert stats[relation.value] == 1
    for relation in RelationKind:
        if relation.is_similarity:
            assert stats[relation.value] == 0

    # users, then apps, then topics
    assert kg.entity_id("user:u1") == 0
    assert kg.entity_id("app:a1") == 1
    assert kg.entity_id("topic:0") == 2
    assert kg.has_triple(1, RelationKind.HAVINGQ, kg.entity_id("quality:4.0"))
    assert kg.has_triple(1, RelationKind.HAVINGUT, kg.entity_id("updated:2020-Q2"))


def test_built_graph_respects_signatures_and_cardinality():
    apps = [
        make_app("a1", avg_rating=4.0, install_count=10),
        make_app("a2", avg_rating=4.5, install_count=100, size_bytes=SIZE_VARIES),
        make_app("a3", avg_rating=3.0, category="Finance", interactive_elements=("Digital Purchases",)),
    ]
    ratings = [
        make_rating("u1", "a1"), make_rating("u1", "a2"),
        make_rating("u2", "a1"), make_rating("u2", "a2"),
        make_rating("u3", "a3"),
    ]
    matrix = ingestion_service.build_rating_matrix(ratings)
    topics = TopicModel(
        phi=np.array([[0.5, 0.5], [0.5, 0.5]]), theta=np.full((3, 2), 0.5), vocabulary=("a", "b"),
    )

    kg = build_arkg(apps, matrix, topics, {"a1": 0, "a2": 0, "a3": 1}, KGSection())

    for triple in kg.triples():
        head_kind, tail_kind = RELATION_SIGNATURES[triple.relation]
        assert kg.kind_of(triple.head) == head_kind
        assert kg.kind_of(triple.tail) == tail_kind
    for app in kg.entities_of_kind(EntityKind.APP).tolist():
        relations = [r for r, _ in kg.neighbors(app)]
        for relation in SINGLE_VALUED_APP_RELATIONS:
            assert relations.count(relation) == 1

    u1, u2 = kg.entity_id("user:u1"), kg.entity_id("user:u2")
    assert kg.has_triple(u1, RelationKind.USIMILAR, u2)
    assert kg.has_triple(u2, RelationKind.USIMILAR, u1)
    t0, t1 = kg.entity_id("topic:0"), kg.entity_id("topic:1")
    assert kg.has_triple(t0, RelationKind.CTSIMILAR, t1)
    q4, q45 = kg.entity_id("quality:4.0"), kg.entity_id("quality:4.5")
    assert kg.has_triple(q4, RelationKind.QSIMILAR, q45)
    assert not kg.has_triple(kg.entity_id("quality:3.0"), RelationKind.QSIMILAR, q4)


def test_signature_violation_raises(small_kg):
    kg, ids = small_kg["kg"], small_kg["ids"]
    with pytest.raises(SchemaViolationError):
        kg.add_triple(ids["a0"], RelationKind.INTERACT, ids["u0"])
    with pytest.raises(SchemaViolationError):
        kg.add_triple(ids["u0"], RelationKind.USIMILAR, ids["u0"])


def test_duplicate_triple_is_ignored(small_kg):
    kg, ids = small_kg["kg"], small_kg["ids"]
    before = kg.n_triples
    assert kg.add_triple(ids["u0"], RelationKind.INTERACT, ids["a0"]) is False
    assert kg.n_triples == before


def test_head_index_and_adjacency_agree(small_kg):
    kg, ids = small_kg["kg"], small_kg["ids"]
    indptr, relations, tails = kg.adjacency()
    for v in range(kg.n_entities):
        expected = [(r.relation_id, t) for r, t in kg.neighbors(v)]
        got = list(zip(relations[indptr[v]:indptr[v + 1]].tolist(), tails[indptr[v]:indptr[v + 1]].tolist()))
        assert got == expected
    assert kg.neighbors(ids["c0"]) == []


def test_unknown_label_raises(small_kg):
    with pytest.raises(UnknownEntityError):
        small_kg["kg"].entity_id("user:nobody")


def test_save_and_load_round_trip(small_kg, tmp_path):
    kg = small_kg["kg"]
    kg.save(str(tmp_path / "kg"))
    loaded = KnowledgeGraph.load(str(tmp_path / "kg"))

    assert loaded.n_entities == kg.n_entities
    np.testing.assert_array_equal(loaded.triple_array(), kg.triple_array())
    assert [loaded.label_of(i) for i in range(loaded.n_entities)] == [kg.label_of(i) for i in range(kg.n_entities)]

"""
TransD: projection, energy, analytic gradients, training sanity, link prediction, checkpoints.
"""

import numpy as np
import pytest

from app.config import TransDSection
from app.db.triple_store import KnowledgeGraph
from app.exceptions import CheckpointError
from app.models.schemas import EntityKind, RelationKind
from app.services.transd import (
    CorruptionSampler,
    TransDParams,
    energy,
    init_params,
    link_prediction,
    load_transd,
    margin_loss,
    margin_loss_gradients,
    project,
    save_transd,
    train_transd,
    triple_energy,
)
from app.utils.numeric import relative_error


def random_params(rng: np.random.Generator, n_entities: int, n_relations: int, dim: int) -> TransDParams:
    return TransDParams(
        entity_vec=rng.normal(size=(n_entities, dim)),
        entity_proj=rng.normal(size=(n_entities, dim)),
        relation_vec=rng.normal(size=(n_relations, dim)),
        relation_proj=rng.normal(size=(n_relations, dim)),
    )


def satisfiable_kg() -> KnowledgeGraph:
    """
    10 entities, 3 relations, 25 triples with an exact translation solution.

    User i interacts with every app except one. u0 and u1 point at u2, u3
    and u4 through USIMILAR, never back. Every app has the single category.
    """
    kg = KnowledgeGraph()
    users = [kg.add_entity(EntityKind.USER, f"user:u{i}") for i in range(5)]
    apps = [kg.add_entity(EntityKind.APP, f"app:a{i}") for i in range(4)]
    category = kg.add_entity(EntityKind.CATEGORY, "category:c0")
    skipped_app = [0, 1, 2, 3, 0]
    for i, u in enumerate(users):
        for j, a in enumerate(apps):
            if j != skipped_app[i]:
                kg.add_triple(u, RelationKind.INTERACT, a)
    for source in users[:2]:
        for target in users[2:]:
            kg.add_triple(source, RelationKind.USIMILAR, target)
    for a in apps:
        kg.add_triple(a, RelationKind.HAVINGC, category)
    return kg


# ===== SCORING =====

def test_projection_worked_example():
    np.testing.assert_allclose(project(np.array([1.0, 0.0]), np.array([1.0, 1.0]), np.array([0.0, 2.0])), [1.0, 2.0])


def test_projection_without_matrices():
    rng = np.random.default_rng(0)
    e, e_p, r_p = rng.normal(size=(3, 5))
    dense = (np.outer(r_p, e_p) + np.eye(5)) @ e
    np.testing.assert_allclose(project(e, e_p, r_p), dense)


def test_projection_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        project(np.ones(3), np.ones(4), np.ones(3))


def test_zero_projection_exact_translation_has_zero_energy():
    h = np.array([0.1, -0.3, 0.5])
    r = np.array([0.2, 0.2, -0.1])
    zero = np.zeros(3)
    assert energy(h, zero, h + r, zero, r, zero) == pytest.approx(0.0, abs=1e-15)
    assert energy(h, zero, h, zero, r, zero) == pytest.approx(-np.sum(r * r))


def test_margin_loss_is_zero_when_golden_wins_by_margin():
    params = TransDParams(
        entity_vec=np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]),
        entity_proj=np.zeros((3, 2)),
        relation_vec=np.array([[1.0, 0.0]]),
        relation_proj=np.zeros((1, 2)),
    )
    golden = np.array([[0, 0, 1]])
    corrupted = np.array([[0, 0, 2]])
    assert margin_loss(params, golden, corrupted, margin=1.0) == 0.0
    assert margin_loss(params, corrupted, golden, margin=1.0) == pytest.approx(1.0 + 41.0)


def test_margin_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    eps = 1e-6
    for _ in range(100):
        params = random_params(rng, n_entities=6, n_relations=3, dim=4)
        golden = np.column_stack([rng.integers(0, 6, 5), rng.integers(0, 3, 5), rng.integers(0, 6, 5)])
        corrupted = golden.copy()
        corrupted[:, 2] = rng.integers(0, 6, 5)
        # a large margin keeps every hinge active so the loss is smooth
        _, grads = margin_loss_gradients(params, golden, corrupted, margin=1e4)

        for name, tensor in params.as_tensors().items():
            numeric = np.zeros_like(tensor)
            for index in np.ndindex(tensor.shape):
                saved = tensor[index]
                tensor[index] = saved + eps
                up = margin_loss(params, golden, corrupted, 1e4)
                tensor[index] = saved - eps
                down = margin_loss(params, golden, corrupted, 1e4)
                tensor[index] = saved
                numeric[index] = (up - down) / (2 * eps)
            assert relative_error(grads[name], numeric) < 1e-5, name


# ===== CORRUPTION =====

def test_corruptions_keep_kind_and_avoid_golden_triples(small_kg):
    kg = small_kg["kg"]
    sampler = CorruptionSampler(kg)
    golden = kg.triple_array()
    corrupted, ok = sampler.corrupt(golden, np.random.default_rng(0))

    kinds = kg.kind_codes()
    assert np.all(kinds[corrupted[:, 0]] == kinds[golden[:, 0]])
    assert np.all(kinds[corrupted[:, 2]] == kinds[golden[:, 2]])
    assert not np.any(sampler.is_golden(corrupted[ok]))
    changed = (corrupted[:, 0] != golden[:, 0]) ^ (corrupted[:, 2] != golden[:, 2])
    assert np.all(changed[ok])


# ===== TRAINING =====

def test_training_fits_a_satisfiable_graph():
    kg = satisfiable_kg()
    assert kg.n_entities == 10
    assert kg.n_triples == 25
    assert len(set(kg.triple_array()[:, 1].tolist())) == 3
    config = TransDSection(margin=1.0, learning_rate=0.1, epochs=200, batch_size=4)

    params = train_transd(kg, config, dim=8, seed=0)
    metrics = link_prediction(params, kg, kg.triple_array())

    assert params.loss_history[-1] < params.loss_history[0]
    assert metrics["hits@1"] >= 0.8
    np.testing.assert_allclose(np.linalg.norm(params.entity_vec, axis=1), 1.0)


def test_training_is_deterministic():
    kg = satisfiable_kg()
    config = TransDSection(epochs=5, batch_size=3)
    first = train_transd(kg, config, dim=4, seed=9)
    second = train_transd(kg, config, dim=4, seed=9)
    for name, tensor in first.as_tensors().items():
        np.testing.assert_array_equal(tensor, second.as_tensors()[name])


def test_empty_graph_cannot_be_trained():
    with pytest.raises(ValueError):
        train_transd(KnowledgeGraph(), TransDSection(), dim=4, seed=0)


def test_link_prediction_counts_ties_against_the_true_tail(small_kg):
    kg, ids = small_kg["kg"], small_kg["ids"]
    zero = TransDParams(
        entity_vec=np.zeros((kg.n_entities, 4)),
        entity_proj=np.zeros((kg.n_entities, 4)),
        relation_vec=np.zeros((kg.n_relations, 4)),
        relation_proj=np.zeros((kg.n_relations, 4)),
    )
    # candidates a0, a1, a2; a1 is filtered as another golden tail of (u0, INTERACT)
    metrics = link_prediction(zero, kg, np.array([[ids["u0"], RelationKind.INTERACT.relation_id, ids["a0"]]]))
    assert metrics["mean_rank"] == 2.0
    assert metrics["hits@1"] == 0.0
    assert metrics["hits@3"] == 1.0


# ===== CHECKPOINTS =====

def test_checkpoint_round_trip(tmp_path, small_kg):
    kg = small_kg["kg"]
    params = init_params(kg.n_entities, kg.n_relations, 6, np.random.default_rng(1))
    path = str(tmp_path / "transd.ckpt")
    save_transd(params, path)

    loaded = load_transd(path, expected_entities=kg.n_entities)
    for name, tensor in params.as_tensors().items():
        np.testing.assert_array_equal(loaded.as_tensors()[name], tensor)
    np.testing.assert_array_equal(
        triple_energy(loaded, kg.triple_array()), triple_energy(params, kg.triple_array()),
    )


def test_checkpoint_entity_mismatch_raises(tmp_path, small_kg):
    kg = small_kg["kg"]
    path = str(tmp_path / "transd.ckpt")
    save_transd(init_params(kg.n_entities, kg.n_relations, 4, np.random.default_rng(1)), path)
    with pytest.raises(CheckpointError):
        load_transd(path, expected_entities=kg.n_entities + 1)


def test_truncated_checkpoint_raises(tmp_path, small_kg):
    kg = small_kg["kg"]
    path = tmp_path / "transd.ckpt"
    save_transd(init_params(kg.n_entities, kg.n_relations, 4, np.random.default_rng(1)), str(path))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_transd(str(path))


def test_missing_checkpoint_raises(tmp_path):
    with pytest.raises(CheckpointError):
        load_transd(str(tmp_path / "absent.ckpt"))

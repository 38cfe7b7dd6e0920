"""
Planted-cluster generator.
"""

import pytest

from app.config import SyntheticSection
from app.exceptions import ConfigError
from app.services.ingestion import ingestion_service
from app.services.synthetic import expected_interactions, generate_synthetic, pseudo_word


def cluster_of_user(user_id: str) -> int:
    return int(user_id[len("user"):len("user") + 2])


def cluster_of_app(app_id: str) -> int:
    return int(app_id[len("app"):len("app") + 2])


def test_no_cross_cluster_interactions_without_p_out():
    config = SyntheticSection(clusters=3, users_per_cluster=10, apps_per_cluster=8, p_in=0.5, p_out=0.0)
    dataset = generate_synthetic(config, seed=1)
    assert dataset.ratings
    for rating in dataset.ratings:
        assert cluster_of_user(rating.user_id) == cluster_of_app(rating.app_id)


def test_interaction_count_within_three_sigma():
    config = SyntheticSection()
    mean, std = expected_interactions(config)
    dataset = generate_synthetic(config, seed=42)
    assert abs(len(dataset.ratings) - mean) <= 3 * std


def test_generated_shape_and_grades():
    config = SyntheticSection(clusters=2, users_per_cluster=5, apps_per_cluster=4, words_per_readme=12)
    dataset = generate_synthetic(config, seed=0)
    assert len(dataset.apps) == 8
    assert [a.app_id for a in dataset.apps] == sorted(a.app_id for a in dataset.apps)
    assert {a.category for a in dataset.apps} == {"Games", "Finance"}
    assert all(len(a.readme_text.split()) == 12 for a in dataset.apps)
    assert {r.rating for r in dataset.ratings} <= {0.2, 0.4, 0.6, 0.8, 1.0}


def test_generator_is_deterministic():
    config = SyntheticSection(users_per_cluster=20, apps_per_cluster=10)
    assert generate_synthetic(config, seed=7) == generate_synthetic(config, seed=7)
    assert generate_synthetic(config, seed=7) != generate_synthetic(config, seed=8)


def test_p_out_must_stay_below_p_in():
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSection(p_in=0.1, p_out=0.1), seed=0)


def test_pseudo_words_are_distinct():
    words = {pseudo_word(g, i) for g in range(3) for i in range(150)}
    assert len(words) == 450


def test_generated_dataset_survives_ingestion(write_dataset):
    dataset = generate_synthetic(SyntheticSection(users_per_cluster=10, apps_per_cluster=6), seed=3)
    apps_path, ratings_path = write_dataset(dataset.apps, dataset.ratings)
    loaded = ingestion_service.load_dataset(apps_path, ratings_path)
    assert loaded.apps == dataset.apps
    assert loaded.ratings == dataset.ratings

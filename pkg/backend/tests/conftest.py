"""
Shared fixtures: tiny app / rating tables and random knowledge graphs.
"""

import json
import shutil
from datetime import date
from typing import Dict, List

import numpy as np
import pytest

from app.config import EngineConfig
from app.db.triple_store import KnowledgeGraph
from app.models.schemas import AppRecord, Dataset, EntityKind, RatingRecord, RelationKind
from app.services.ingestion import ingestion_service
from app.services.pipeline import PipelineService


def make_app(app_id: str, **overrides) -> AppRecord:
    fields = dict(
        app_id=app_id,
        category="Games",
        provider="acme",
        content_rating="Everyone",
        has_ads=True,
        is_free=True,
        interactive_elements=(),
        avg_rating=4.0,
        install_count=1000,
        updated_date=date(2020, 5, 17),
        size_bytes=10 * 2 ** 20,
        readme_text="puzzle game with colourful levels",
    )
    fields.update(overrides)
    return AppRecord(**fields)


def make_rating(user_id: str, app_id: str, rating: float = 1.0) -> RatingRecord:
    return RatingRecord(user_id=user_id, app_id=app_id, rating=rating)


@pytest.fixture
def write_dataset(tmp_path):
    """Write apps / ratings to CSV files in tmp_path and return their paths"""
    def _write(apps: List[AppRecord], ratings: List[RatingRecord], name: str = "data"):
        apps_path = str(tmp_path / name / "apps.csv")
        ratings_path = str(tmp_path / name / "ratings.csv")
        ingestion_service.write_dataset(Dataset(apps=apps, ratings=ratings), apps_path, ratings_path)
        return apps_path, ratings_path
    return _write


def random_kg(rng: np.random.Generator, n_users: int, n_apps: int, n_categories: int, density: float = 0.4) -> KnowledgeGraph:
    """Users, apps and categories with random INTERACT / USIMILAR / HAVINGC edges"""
    kg = KnowledgeGraph()
    users = [kg.add_entity(EntityKind.USER, f"user:u{i}") for i in range(n_users)]
    apps = [kg.add_entity(EntityKind.APP, f"app:a{i}") for i in range(n_apps)]
    cats = [kg.add_entity(EntityKind.CATEGORY, f"category:c{i}") for i in range(n_categories)]
    for u in users:
        for a in apps:
            if rng.random() < density:
                kg.add_triple(u, RelationKind.INTERACT, a)
        for v in users:
            if u != v and rng.random() < density / 2:
                kg.add_triple(u, RelationKind.USIMILAR, v)
    for a in apps:
        kg.add_triple(a, RelationKind.HAVINGC, cats[int(rng.integers(0, n_categories))])
    return kg


@pytest.fixture
def small_kg() -> Dict[str, object]:
    """
    Two users, three apps, two categories.

    u0 -> a0, a1 ; u1 -> a2 ; u0 <-> u1 similar ; a0, a1 in c0 ; a2 in c1
    """
    kg = KnowledgeGraph()
    ids = {}
    for name in ("u0", "u1"):
        ids[name] = kg.add_entity(EntityKind.USER, f"user:{name}")
    for name in ("a0", "a1", "a2"):
        ids[name] = kg.add_entity(EntityKind.APP, f"app:{name}")
    for name in ("c0", "c1"):
        ids[name] = kg.add_entity(EntityKind.CATEGORY, f"category:{name}")
    kg.add_triple(ids["u0"], RelationKind.INTERACT, ids["a0"])
    kg.add_triple(ids["u0"], RelationKind.INTERACT, ids["a1"])
    kg.add_triple(ids["u1"], RelationKind.INTERACT, ids["a2"])
    kg.add_triple(ids["u0"], RelationKind.USIMILAR, ids["u1"])
    kg.add_triple(ids["u1"], RelationKind.USIMILAR, ids["u0"])
    kg.add_triple(ids["a0"], RelationKind.HAVINGC, ids["c0"])
    kg.add_triple(ids["a1"], RelationKind.HAVINGC, ids["c0"])
    kg.add_triple(ids["a2"], RelationKind.HAVINGC, ids["c1"])
    return {"kg": kg, "ids": ids}


TINY_CONFIG = {
    "rng_seed": 7,
    "embed_dim": 8,
    "ingest": {"min_user_interactions": 3, "min_app_interactions": 3},
    "topics": {"topic_count": 2, "iterations": 10, "min_term_count": 1},
    "transd": {"epochs": 3, "batch_size": 128},
    "kgep": {"propagation_layers": 1, "epochs": 2, "batch_size": 256, "negatives_per_positive": 2},
    "evaluation": {"ks": [5, 10], "models": ["kgep", "usercf", "popularity", "transd"]},
    "synthetic": {
        "clusters": 2, "users_per_cluster": 15, "apps_per_cluster": 10,
        "p_in": 0.5, "p_out": 0.05, "vocab_per_cluster": 12, "shared_vocab": 4, "words_per_readme": 15,
    },
}


@pytest.fixture(scope="session")
def finished_run(tmp_path_factory):
    """A complete synthetic pipeline run on TINY_CONFIG; copy before mutating"""
    root = tmp_path_factory.mktemp("finished")
    config_path = root / "config.json"
    config_path.write_text(json.dumps(TINY_CONFIG), encoding="utf-8")
    work_dir = root / "work"
    PipelineService(str(work_dir), EngineConfig.model_validate(TINY_CONFIG), threads=1).run_all()
    return {"work_dir": work_dir, "config_path": config_path}


@pytest.fixture
def run_copy(finished_run, tmp_path):
    """Private copy of the finished work directory"""
    target = tmp_path / "work"
    shutil.copytree(finished_run["work_dir"], target)
    return target

"""
Pipeline orchestration: manifest caching, upstream checks, recommend, sweep, end-to-end.
"""

import copy
import json
import os

import pytest

import app.services.pipeline as pipeline_module
from app.config import EngineConfig
from app.exceptions import KGEPError, StageError, UnknownEntityError
from app.models.schemas import PipelineManifest
from app.services.evaluation import read_report
from app.services.pipeline import STAGE_SECTIONS, PipelineService

from tests.conftest import TINY_CONFIG


def tiny_config(**section_overrides) -> EngineConfig:
    data = copy.deepcopy(TINY_CONFIG)
    for key, value in section_overrides.items():
        section, field = key.split("__")
        data[section][field] = value
    return EngineConfig.model_validate(data)


def counting(monkeypatch, name):
    """Wrap a pipeline-level function and record how often it runs"""
    calls = []
    original = getattr(pipeline_module, name)

    def wrapper(*args, **kwargs):
        calls.append(name)
        return original(*args, **kwargs)
    monkeypatch.setattr(pipeline_module, name, wrapper)
    return calls


# ===== MANIFEST =====

def test_run_records_every_stage(finished_run):
    work_dir = finished_run["work_dir"]
    manifest = PipelineManifest.model_validate_json((work_dir / "manifest.json").read_text(encoding="utf-8"))

    assert set(manifest.stages) == set(STAGE_SECTIONS)
    for stage, record in manifest.stages.items():
        assert record.seed == TINY_CONFIG["rng_seed"]
        for path in record.artifacts.values():
            assert not os.path.isabs(path)
            assert (work_dir / path).exists()

    report = read_report(str(work_dir / manifest.stages["evaluate"].artifacts["report"]))
    assert [(r.model, r.k) for r in report.rows] == [
        (m, k) for m in ("kgep", "usercf", "popularity", "transd") for k in (5, 10)
    ]


def test_split_file_partitions_the_filtered_ratings(finished_run):
    service = PipelineService(str(finished_run["work_dir"]), tiny_config(), threads=1)
    split = service.load_split()
    total = split.train.n_entries + split.validation.n_entries + split.test.n_entries
    assert total == len(service.load_dataset().ratings)
    for u in range(len(split.train.users)):
        assert len(split.train.items_of(u)) >= 1
        assert len(split.test.items_of(u)) >= 1


def test_rerun_skips_unchanged_stages(run_copy, monkeypatch):
    calls = counting(monkeypatch, "train_transd")
    PipelineService(str(run_copy), tiny_config(), threads=1).run_all()
    assert calls == []

    PipelineService(str(run_copy), tiny_config(), threads=1).run_all(force=True)
    assert calls == ["train_transd"]


def test_changed_kgep_section_reruns_only_downstream(run_copy, monkeypatch):
    transd_calls = counting(monkeypatch, "train_transd")
    kgep_calls = counting(monkeypatch, "train_kgep")

    PipelineService(str(run_copy), tiny_config(kgep__epochs=3), threads=1).run_all()

    assert transd_calls == []
    assert kgep_calls == ["train_kgep"]


def test_upstream_config_mismatch_is_reported(run_copy):
    service = PipelineService(str(run_copy), tiny_config(topics__iterations=11), threads=1)
    with pytest.raises(StageError) as info:
        service.build_kg()
    assert info.value.stage == "build-topics"


def test_missing_upstream_stage_is_reported(tmp_path):
    service = PipelineService(str(tmp_path / "empty"), tiny_config(), threads=1)
    with pytest.raises(StageError) as info:
        service.build_topics()
    assert info.value.stage == "ingest"


def test_missing_input_file_is_a_stage_error(tmp_path):
    service = PipelineService(str(tmp_path / "work"), tiny_config(), threads=1)
    with pytest.raises(StageError):
        service.ingest(str(tmp_path / "nope.csv"), str(tmp_path / "nope2.csv"))


# ===== RECOMMEND / SWEEP =====

def test_recommend_ranks_unseen_apps(finished_run):
    service = PipelineService(str(finished_run["work_dir"]), tiny_config(), threads=1)
    split = service.load_split()
    user_id = split.train.users[0]
    seen = {split.train.apps[a] for a in split.train.items_of(0).tolist()}

    recommendations = service.recommend(user_id, 5)

    assert [r.rank for r in recommendations] == list(range(1, len(recommendations) + 1))
    assert len(recommendations) == 5
    assert not seen & {r.app_id for r in recommendations}
    scores = [r.score for r in recommendations]
    assert scores == sorted(scores, reverse=True)
    assert all(0.0 < s < 1.0 for s in scores)


def test_recommend_unknown_user(finished_run):
    service = PipelineService(str(finished_run["work_dir"]), tiny_config(), threads=1)
    with pytest.raises(UnknownEntityError):
        service.recommend("nobody", 5)


def test_sweep_writes_one_block_per_value(run_copy):
    service = PipelineService(str(run_copy), tiny_config(), threads=1)
    rows = service.sweep("propagation_layers", ["0", "1"])

    assert [(r.value, r.k) for r in rows] == [("0", 5), ("0", 10), ("1", 5), ("1", 10)]
    lines = (run_copy / "report" / "sweep_propagation_layers.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "param\tvalue\tK\tprecision\trecall\tmap"
    assert len(lines) == 5


def test_sweep_rejects_unknown_parameter(run_copy):
    service = PipelineService(str(run_copy), tiny_config(), threads=1)
    with pytest.raises(KGEPError):
        service.sweep("no_such_field", ["1"])


# ===== DETERMINISM / END TO END =====

def test_identical_runs_are_byte_identical(finished_run, tmp_path):
    PipelineService(str(tmp_path / "again"), tiny_config(), threads=1).run_all()
    for relative in ("kgep/kgep.ckpt", "transd/transd.ckpt", "report/report.tsv", "kg/triples.tsv"):
        assert (tmp_path / "again" / relative).read_bytes() == (finished_run["work_dir"] / relative).read_bytes()


@pytest.mark.slow
def test_planted_clusters_favour_kgep_over_popularity(tmp_path):
    config_path = os.path.join(os.path.dirname(__file__), "..", "evaluation", "synthetic_config.json")
    with open(config_path, "r", encoding="utf-8") as f:
        config = EngineConfig.model_validate(json.load(f))

    PipelineService(str(tmp_path / "run"), config, threads=1).run_all()
    report = read_report(str(tmp_path / "run" / "report" / "report.tsv"))

    assert report.get("kgep", 10).map >= 1.2 * report.get("popularity", 10).map

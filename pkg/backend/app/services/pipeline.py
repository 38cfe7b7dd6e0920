"""
Pipeline orchestration with manifest-based stage caching.

Handles:
- One method per stage (generate, ingest, build-topics, build-kg,
  train-transd, train-kgep, evaluate) reading and writing the work directory
- manifest.json: artifacts, config hash, input hash and seed per stage
- Skipping stages whose config and inputs are unchanged (unless forced)
- Upstream mismatch detection and StageError wrapping
- Hyperparameter sweeps over one kgep field
"""

import hashlib
import json
import os
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd
from loguru import logger

from app.config import EngineConfig, settings
from app.db.triple_store import KnowledgeGraph
from app.exceptions import KGEPError, StageError
from app.models.matrix import RatingMatrix
from app.models.schemas import Dataset, EntityKind, PipelineManifest, Recommendation, StageRecord, SweepRow
from app.services.evaluation import (
    EntityAxes,
    InteractionSplit,
    evaluate,
    kgep_ranker,
    popularity_ranker,
    read_report,
    split_interactions,
    transd_ranker,
    usercf_ranker,
    validation_map_callback,
    write_report,
    write_sweep,
)
from app.services.ingestion import ingestion_service
from app.services.kg_construct import build_arkg, entity_label, topic_assignment_map, user_similarity_matrix
from app.services.recommender import KGEPModel, load_model, save_model, train_kgep
from app.services.synthetic import generate_synthetic
from app.services.topic_model import assign_topics, fit_lda, load_topic_model, preprocess, save_topic_model
from app.services.transd import link_prediction, load_transd, save_transd, train_transd
from app.utils.text import load_stopwords


# stage -> config sections it consumes
STAGE_SECTIONS: Dict[str, Sequence[str]] = {
    "generate": ("synthetic",),
    "ingest": ("ingest",),
    "build-topics": ("topics",),
    "build-kg": ("kg",),
    "train-transd": ("transd",),
    "train-kgep": ("kgep",),
    "evaluate": ("evaluation",),
}

SPLIT_COLUMNS = ["user_id", "app_id", "partition"]


def file_digest(paths: Sequence[str]) -> str:
    """SHA-256 over the contents of the given files, in the given order"""
    digest = hashlib.sha256()
    for path in paths:
        digest.update(os.path.basename(path).encode("utf-8"))
        with open(path, "rb") as f:
            for block in iter(lambda: f.read(1 << 20), b""):
                digest.update(block)
    return digest.hexdigest()


class PipelineService:
    """Runs stages inside one work directory and keeps its manifest current"""

    def __init__(self, work_dir: str, config: EngineConfig, threads: Optional[int] = None):
        self.work_dir = work_dir
        self.config = config
        self.threads = threads if threads is not None else settings.THREADS
        self.manifest_path = os.path.join(work_dir, "manifest.json")
        os.makedirs(work_dir, exist_ok=True)
        self.manifest = self._load_manifest()

    # ===== MANIFEST =====

    def _load_manifest(self) -> PipelineManifest:
        if not os.path.exists(self.manifest_path):
            return PipelineManifest()
        with open(self.manifest_path, "r", encoding="utf-8") as f:
            return PipelineManifest.model_validate_json(f.read())

    def _save_manifest(self) -> None:
        with open(self.manifest_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(self.manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")

    def path(self, *parts: str) -> str:
        return os.path.join(self.work_dir, *parts)

    def artifact(self, stage: str, name: str) -> str:
        """Absolute path of an upstream artifact; the upstream stage must match the current config"""
        record = self.manifest.record_for(stage)
        if record is None:
            raise StageError(stage, KGEPError(f"no '{stage}' output in {self.work_dir}; run that stage first"))
        expected = self.config.section_hash(*STAGE_SECTIONS[stage])
        if record.config_hash != expected:
            raise StageError(stage, KGEPError(
                f"'{stage}' output in {self.work_dir} was produced with a different config; rerun it"
            ))
        return self.path(record.artifacts[name])

    def run_stage(
        self,
        stage: str,
        inputs: Sequence[str],
        produce: Callable[[], Dict[str, str]],
        force: bool = False,
    ) -> StageRecord:
        """
        Run one stage unless its manifest record already matches.

        Args:
            stage: stage name
            inputs: files whose contents feed the stage
            produce: does the work, returns logical name -> absolute artifact path
            force: rerun even when cached
        """
        config_hash = self.config.section_hash(*STAGE_SECTIONS[stage])
        try:
            input_hash = file_digest(inputs)
        except OSError as e:
            logger.error(f"Stage {stage}: cannot read input: {e}")
            raise StageError(stage, e) from e
        record = self.manifest.record_for(stage)
        if (
            not force and record is not None
            and record.config_hash == config_hash and record.input_hash == input_hash
            and all(os.path.exists(self.path(p)) for p in record.artifacts.values())
        ):
            logger.info(f"Stage {stage}: inputs unchanged, skipped")
            return record

        logger.info(f"Stage {stage}: running")
        try:
            artifacts = produce()
        except KGEPError as e:
            logger.error(f"Stage {stage} failed: {e}")
            raise StageError(stage, e) from e
        except (OSError, ValueError, KeyError) as e:
            logger.error(f"Stage {stage} failed: {e}")
            raise StageError(stage, e) from e

        record = StageRecord(
            stage=stage,
            config_hash=config_hash,
            input_hash=input_hash,
            seed=self.config.rng_seed,
            artifacts={name: os.path.relpath(p, self.work_dir) for name, p in artifacts.items()},
        )
        self.manifest.stages[stage] = record
        self._save_manifest()
        return record

    # ===== LOADERS =====

    def load_dataset(self) -> Dataset:
        return ingestion_service.load_dataset(self.artifact("ingest", "apps"), self.artifact("ingest", "ratings"))

    def load_split(self) -> InteractionSplit:
        dataset = self.load_dataset()
        matrix = ingestion_service.build_rating_matrix(dataset.ratings)
        frame = pd.read_csv(self.artifact("ingest", "split"), sep="\t", dtype=str, keep_default_na=False)
        parts = {}
        for name in ("train", "validation", "test"):
            rows = frame[frame["partition"] == name]
            pairs = [
                (matrix.user_index[u], matrix.app_index[a])
                for u, a in zip(rows["user_id"].tolist(), rows["app_id"].tolist())
            ]
            parts[name] = matrix.restrict(pairs)
        return InteractionSplit(seed=self.config.rng_seed, **parts)

    def load_kg(self) -> KnowledgeGraph:
        return KnowledgeGraph.load(os.path.dirname(self.artifact("build-kg", "triples")))

    def load_kgep(self, kg: Optional[KnowledgeGraph] = None) -> KGEPModel:
        return load_model(self.artifact("train-kgep", "checkpoint"), kg or self.load_kg())

    # ===== STAGES =====

    def generate(self, force: bool = False) -> StageRecord:
        def produce():
            dataset = generate_synthetic(self.config.synthetic, self.config.rng_seed)
            paths = {"apps": self.path("generate", "apps.csv"), "ratings": self.path("generate", "ratings.csv")}
            ingestion_service.write_dataset(dataset, paths["apps"], paths["ratings"])
            return paths
        return self.run_stage("generate", [], produce, force)

    def ingest(self, apps_path: str, ratings_path: str, force: bool = False) -> StageRecord:
        def produce():
            cfg = self.config.ingest
            dataset = ingestion_service.load_dataset(apps_path, ratings_path)
            apps, ratings = ingestion_service.filter_cold_start(
                dataset.apps, dataset.ratings, cfg.min_user_interactions, cfg.min_app_interactions,
            )
            changes = ingestion_service.second_pass_would_change(
                apps, ratings, cfg.min_user_interactions, cfg.min_app_interactions,
            )
            apps = sorted(apps, key=lambda a: a.app_id)
            ratings = sorted(ratings, key=lambda r: (r.user_id, r.app_id))
            matrix = ingestion_service.build_rating_matrix(ratings)
            split = split_interactions(matrix, self.config.rng_seed, cfg.train_fraction, cfg.validation_fraction)

            paths = {
                "apps": self.path("dataset", "apps.csv"),
                "ratings": self.path("dataset", "ratings.csv"),
                "stats": self.path("dataset", "stats.json"),
                "skipped": self.path("dataset", "skipped.json"),
                "split": self.path("dataset", "split.tsv"),
            }
            ingestion_service.write_dataset(Dataset(apps=apps, ratings=ratings), paths["apps"], paths["ratings"])
            stats = ingestion_service.dataset_stats(matrix, changes, len(dataset.skipped))
            with open(paths["stats"], "w", encoding="utf-8", newline="\n") as f:
                f.write(stats.model_dump_json(indent=2) + "\n")
            with open(paths["skipped"], "w", encoding="utf-8", newline="\n") as f:
                json.dump([s.model_dump() for s in dataset.skipped], f, indent=2)
                f.write("\n")
            self._write_split(split, paths["split"])
            return paths
        return self.run_stage("ingest", [apps_path, ratings_path], produce, force)

    def _write_split(self, split: InteractionSplit, path: str) -> None:
        rows = []
        for name in ("train", "validation", "test"):
            matrix: RatingMatrix = getattr(split, name)
            for (u, a) in sorted(matrix.entries):
                rows.append({"user_id": matrix.users[u], "app_id": matrix.apps[a], "partition": name})
        pd.DataFrame(rows, columns=SPLIT_COLUMNS).to_csv(path, sep="\t", index=False, lineterminator="\n")

    def build_topics(self, force: bool = False) -> StageRecord:
        apps_path = self.artifact("ingest", "apps")

        def produce():
            cfg = self.config.topics
            apps = self.load_dataset().apps
            corpus = preprocess(
                [a.readme_text for a in apps], load_stopwords(cfg.stopwords_path),
                cfg.min_term_count, doc_ids=[a.app_id for a in apps],
            )
            model = fit_lda(corpus, cfg.topic_count, cfg.resolved_alpha, cfg.beta, cfg.iterations, self.config.rng_seed)
            paths = save_topic_model(model, self.path("topics"))
            paths["assignment"] = self.path("topics", "assignment.tsv")
            with open(paths["assignment"], "w", encoding="utf-8", newline="\n") as f:
                for app_id, topic in zip(corpus.doc_ids, assign_topics(model).tolist()):
                    f.write(f"{app_id}\t{topic}\n")
            return paths
        return self.run_stage("build-topics", [apps_path], produce, force)

    def _load_assignment(self) -> Dict[str, int]:
        frame = pd.read_csv(
            self.artifact("build-topics", "assignment"), sep="\t", header=None,
            names=["app_id", "topic"], dtype={"app_id": str, "topic": int}, keep_default_na=False,
        )
        return topic_assignment_map(frame["app_id"].tolist(), frame["topic"].to_numpy())

    def build_kg(self, force: bool = False) -> StageRecord:
        inputs = [
            self.artifact("ingest", "apps"), self.artifact("ingest", "split"),
            self.artifact("build-topics", "phi"), self.artifact("build-topics", "assignment"),
        ]

        def produce():
            split = self.load_split()
            topic_model = load_topic_model(os.path.dirname(self.artifact("build-topics", "phi")))
            kg = build_arkg(self.load_dataset().apps, split.train, topic_model, self._load_assignment(), self.config.kg)
            return kg.save(self.path("kg"))
        return self.run_stage("build-kg", inputs, produce, force)

    def train_transd(self, force: bool = False) -> StageRecord:
        inputs = [self.artifact("build-kg", "triples"), self.artifact("build-kg", "entities")]

        def produce():
            kg = self.load_kg()
            params = train_transd(kg, self.config.transd, self.config.embed_dim, self.config.rng_seed)
            paths = {
                "checkpoint": self.path("transd", "transd.ckpt"),
                "diagnostics": self.path("transd", "link_prediction.json"),
            }
            save_transd(params, paths["checkpoint"])
            metrics = link_prediction(params, kg, kg.triple_array()[:1000])
            logger.info(f"TransD link prediction on training triples: {metrics}")
            with open(paths["diagnostics"], "w", encoding="utf-8", newline="\n") as f:
                json.dump({"loss_history": params.loss_history, **metrics}, f, indent=2, sort_keys=True)
                f.write("\n")
            return paths
        return self.run_stage("train-transd", inputs, produce, force)

    def train_kgep(self, force: bool = False) -> StageRecord:
        inputs = [
            self.artifact("build-kg", "triples"), self.artifact("build-kg", "entities"),
            self.artifact("train-transd", "checkpoint"), self.artifact("ingest", "split"),
        ]

        def produce():
            model = self._fit_kgep(self.config)
            path = self.path("kgep", "kgep.ckpt")
            save_model(model, path)
            return {"checkpoint": path}
        return self.run_stage("train-kgep", inputs, produce, force)

    def _fit_kgep(self, config: EngineConfig, kg: Optional[KnowledgeGraph] = None) -> KGEPModel:
        kg = kg or self.load_kg()
        transd = load_transd(self.artifact("train-transd", "checkpoint"), expected_entities=kg.n_entities)
        validation = validation_map_callback(kg, self.load_split(), k=10)
        return train_kgep(kg, transd, config.kgep, config.rng_seed, validation=validation)

    def evaluate(self, force: bool = False, out_path: Optional[str] = None) -> StageRecord:
        inputs = [
            self.artifact("ingest", "split"), self.artifact("build-kg", "triples"),
            self.artifact("train-transd", "checkpoint"),
        ]
        if "kgep" in self.config.evaluation.models:
            inputs.append(self.artifact("train-kgep", "checkpoint"))

        def produce():
            report = self.run_evaluation()
            path = self.path("report", "report.tsv")
            write_report(report, path)
            return {"report": path}

        record = self.run_stage("evaluate", inputs, produce, force)
        if out_path:
            write_report(read_report(self.path(record.artifacts["report"])), out_path)
        return record

    def run_evaluation(self, kgep_model: Optional[KGEPModel] = None, models: Optional[Sequence[str]] = None):
        cfg = self.config.evaluation
        split = self.load_split()
        kg = self.load_kg()
        axes = EntityAxes(kg, split.train)
        rankers = {}
        for name in models or cfg.models:
            if name == "kgep":
                rankers[name] = kgep_ranker(kgep_model or self.load_kgep(kg), axes)
            elif name == "transd":
                transd = load_transd(self.artifact("train-transd", "checkpoint"), expected_entities=kg.n_entities)
                rankers[name] = transd_ranker(transd, axes)
            elif name == "usercf":
                rankers[name] = usercf_ranker(split.train, user_similarity_matrix(split.train), cfg.usercf_neighbors)
            elif name == "popularity":
                rankers[name] = popularity_ranker(split.train)
        return evaluate(rankers, split, cfg.ks, self.threads)

    def run_all(
        self,
        apps_path: Optional[str] = None,
        ratings_path: Optional[str] = None,
        force: bool = False,
    ) -> List[StageRecord]:
        """Every stage in order; generates the synthetic dataset when no input files are given"""
        records = []
        if apps_path is None or ratings_path is None:
            records.append(self.generate(force))
            apps_path = self.artifact("generate", "apps")
            ratings_path = self.artifact("generate", "ratings")
        records.append(self.ingest(apps_path, ratings_path, force))
        records.append(self.build_topics(force))
        records.append(self.build_kg(force))
        records.append(self.train_transd(force))
        if "kgep" in self.config.evaluation.models:
            records.append(self.train_kgep(force))
        records.append(self.evaluate(force))
        return records

    # ===== SWEEP / RECOMMEND =====

    def sweep(self, param: str, values: Sequence[str]) -> List[SweepRow]:
        """Retrain KGEP for each value of one kgep field and evaluate it"""
        if param not in type(self.config.kgep).model_fields:
            raise KGEPError(f"unknown kgep parameter {param!r}")
        kg = self.load_kg()
        rows = []
        for value in values:
            data = self.config.model_dump(mode="json")
            data["kgep"][param] = json.loads(value) if value not in ("", None) else None
            try:
                variant = EngineConfig.model_validate(data)
            except ValueError as e:
                raise KGEPError(f"invalid value {value!r} for kgep.{param}: {e}") from e
            logger.info(f"Sweep {param}={value}")
            model = self._fit_kgep(variant, kg)
            report = self.run_evaluation(kgep_model=model, models=["kgep"])
            rows += [
                SweepRow(param=param, value=str(value), k=r.k, precision=r.precision, recall=r.recall, map=r.map)
                for r in report.rows
            ]
        write_sweep(rows, self.path("report", f"sweep_{param}.tsv"))
        return rows

    def recommend(self, user_id: str, k: int, exclude_train: bool = True) -> List[Recommendation]:
        kg = self.load_kg()
        model = self.load_kgep(kg)
        user = kg.entity_id(entity_label(EntityKind.USER, user_id))
        exclude = model.training_positives(user) if exclude_train else None
        ranked = model.recommend(user, k, exclude)
        prefix = entity_label(EntityKind.APP, "")
        return [
            Recommendation(rank=i, app_id=kg.label_of(app)[len(prefix):], score=score)
            for i, (app, score) in enumerate(ranked, start=1)
        ]

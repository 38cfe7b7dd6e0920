from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings
from typing import List, Literal, Optional
import hashlib
import json
import os

from app.exceptions import ConfigError


class Settings(BaseSettings):
    """Process settings loaded from environment variables"""

    # Application
    LOG_LEVEL: str = "INFO"

    # Pipeline working directory (all stage artifacts land here)
    WORK_DIR: str = "./backend/data/run"

    # Intra-stage parallelism; 1 keeps every stage deterministic
    THREADS: int = 1

    # Overrides EngineConfig.rng_seed when set
    KGEP_SEED: Optional[int] = None

    class Config:
        env_file = ".env"
        case_sensitive = True


# ===== ENGINE CONFIG SECTIONS =====

class IngestSection(BaseModel):
    """Cold-start thresholds and split proportions"""
    min_user_interactions: int = Field(10, ge=1)
    min_app_interactions: int = Field(10, ge=1)
    train_fraction: float = Field(0.7, gt=0, lt=1)
    validation_fraction: float = Field(0.1, ge=0, lt=1)

    @model_validator(mode="after")
    def _fractions_fit(self):
        if self.train_fraction + self.validation_fraction >= 1.0:
            raise ValueError("train_fraction + validation_fraction must leave room for a test partition")
        return self


class TopicSection(BaseModel):
    """LDA settings; alpha defaults to 50 / topic_count"""
    topic_count: int = Field(50, ge=2)
    alpha: Optional[float] = Field(None, gt=0)
    beta: float = Field(0.01, gt=0)
    iterations: int = Field(200, ge=1)
    min_term_count: int = Field(5, ge=1)
    stopwords_path: Optional[str] = None

    @property
    def resolved_alpha(self) -> float:
        return self.alpha if self.alpha is not None else 50.0 / self.topic_count


class KGSection(BaseModel):
    """Similarity thresholds for CTSIMILAR / USIMILAR extraction"""
    cts: float = Field(0.9, gt=0, lt=1)
    us: float = Field(0.98, gt=0, lt=1)
    # "distance" thresholds the raw Hellinger distance instead of 1 - distance
    ct_similarity_mode: Literal["similarity", "distance"] = "similarity"


class TransDSection(BaseModel):
    """General KG embedding stage"""
    margin: float = Field(1.0, gt=0)
    learning_rate: float = Field(0.01, gt=0)
    epochs: int = Field(100, ge=1)
    batch_size: int = Field(1024, ge=1)


class KGEPSection(BaseModel):
    """Propagation + recommender training"""
    propagation_layers: int = Field(1, ge=0)
    learning_rate: float = Field(0.02, gt=0)
    epochs: int = Field(80, ge=1)
    negatives_per_positive: int = Field(4, ge=1)
    l2_lambda: float = Field(1e-5, ge=0)
    batch_size: int = Field(1024, ge=1)
    neighbor_cap: Optional[int] = Field(None, ge=1)
    raw_score: bool = False
    dropout: float = Field(0.0, ge=0, lt=1)
    propagation_dim: Optional[int] = Field(None, ge=1)
    early_stop_patience: Optional[int] = Field(None, ge=1)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_epsilon: float = Field(1e-8, gt=0)


class EvaluationSection(BaseModel):
    """Top-K evaluation settings"""
    ks: List[int] = [10, 20, 30, 40]
    models: List[Literal["kgep", "usercf", "popularity", "transd"]] = ["kgep", "usercf", "popularity"]
    usercf_neighbors: Optional[int] = Field(None, ge=1)

    @field_validator("ks")
    @classmethod
    def _positive_ks(cls, ks: List[int]) -> List[int]:
        if not ks or any(k < 1 for k in ks):
            raise ValueError("ks must be a non-empty list of positive integers")
        return ks


class SyntheticSection(BaseModel):
    """Planted-cluster generator (desk-scale validation dataset)"""
    clusters: int = Field(2, ge=1)
    users_per_cluster: int = Field(100, ge=1)
    apps_per_cluster: int = Field(50, ge=1)
    p_in: float = Field(0.3, gt=0, le=1)
    p_out: float = Field(0.02, ge=0, lt=1)
    vocab_per_cluster: int = Field(30, ge=1)
    shared_vocab: int = Field(20, ge=0)
    words_per_readme: int = Field(40, ge=1)


class EngineConfig(BaseModel):
    """Single source of truth for one experiment; one section per stage"""
    rng_seed: int = 42
    embed_dim: int = Field(16, ge=1)
    ingest: IngestSection = IngestSection()
    topics: TopicSection = TopicSection()
    kg: KGSection = KGSection()
    transd: TransDSection = TransDSection()
    kgep: KGEPSection = KGEPSection()
    evaluation: EvaluationSection = EvaluationSection()
    synthetic: SyntheticSection = SyntheticSection()

    def section_hash(self, *sections: str) -> str:
        """SHA-256 of the canonical JSON of the named sections (plus seed and dim)"""
        payload = {"rng_seed": self.rng_seed, "embed_dim": self.embed_dim}
        for name in sections:
            payload[name] = getattr(self, name).model_dump(mode="json")
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _coerce(raw: str):
    """Parse a --set value as JSON when possible, else keep the string"""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_engine_config(path: Optional[str] = None, overrides: Optional[List[str]] = None) -> EngineConfig:
    """
    Load the JSON experiment config and apply CLI overrides.

    Args:
        path: JSON config file (None → all defaults)
        overrides: "section.field=value" strings, e.g. "kgep.epochs=5"

    Returns:
        Validated EngineConfig; KGEP_SEED from the environment wins over rng_seed
    """
    data = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from e

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.field=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        target = data
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = _coerce(raw.strip())

    if settings.KGEP_SEED is not None:
        data["rng_seed"] = settings.KGEP_SEED

    try:
        return EngineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid engine config: {e}") from e


# Create settings instance
settings = Settings()

from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import List, Optional, Dict, Literal, Tuple, Union
from datetime import date
from enum import Enum


SIZE_VARIES = "VARIES"
RATING_GRADES = (0.2, 0.4, 0.6, 0.8, 1.0)


# ===== DATASET MODELS =====

class AppRecord(BaseModel):
    """One row of apps.csv"""
    model_config = ConfigDict(frozen=True)

    app_id: str = Field(min_length=1)
    category: str
    provider: str
    content_rating: str  # age restriction label
    has_ads: bool
    is_free: bool
    interactive_elements: Tuple[str, ...] = ()
    avg_rating: float = Field(ge=0.0, le=5.0)
    install_count: int = Field(ge=0)
    updated_date: date
    size_bytes: Union[int, Literal["VARIES"]]
    readme_text: str = ""

    @field_validator("app_id", "category", "provider", "content_rating", mode="before")
    @classmethod
    def _strip(cls, value):
        return value.strip() if isinstance(value, str) else value

    @field_validator("interactive_elements", mode="before")
    @classmethod
    def _split_elements(cls, value):
        # ';'-separated in the CSV; stored sorted and duplicate-free
        if value is None:
            return ()
        if isinstance(value, str):
            value = value.split(";")
        return tuple(sorted({v.strip() for v in value if v and v.strip()}))

    @field_validator("size_bytes", mode="before")
    @classmethod
    def _parse_size(cls, value):
        if isinstance(value, str):
            text = value.strip()
            if text.upper() == SIZE_VARIES:
                return SIZE_VARIES
            if not text.isdigit():
                raise ValueError(f"expected a non-negative integer or {SIZE_VARIES}, got {value!r}")
            return int(text)
        if isinstance(value, int) and value < 0:
            raise ValueError("size_bytes must be non-negative")
        return value


class RatingRecord(BaseModel):
    """One row of ratings.csv; rating is a grade s/5 for s stars"""
    model_config = ConfigDict(frozen=True)

    user_id: str = Field(min_length=1)
    app_id: str = Field(min_length=1)
    rating: float

    @field_validator("user_id", "app_id", mode="before")
    @classmethod
    def _strip(cls, value):
        return value.strip() if isinstance(value, str) else value

    @field_validator("rating")
    @classmethod
    def _is_grade(cls, value: float) -> float:
        stars = round(value * 5)
        if not 1 <= stars <= 5 or abs(value * 5 - stars) > 1e-9:
            raise ValueError(f"rating must be one of {RATING_GRADES}, got {value}")
        return stars / 5


class SkippedRow(BaseModel):
    """Non-fatal ingestion anomaly"""
    file: str
    line: int
    reason: Literal["unknown_app", "duplicate_rating"]
    detail: str


class Dataset(BaseModel):
    """Validated in-memory dataset plus its skip report"""
    apps: List[AppRecord]
    ratings: List[RatingRecord]
    skipped: List[SkippedRow] = []


class DatasetStats(BaseModel):
    """Sparsity report written by the ingest stage"""
    users: int
    apps: int
    ratings: int
    sparsity: float  # |entries| / (|users| * |apps|)
    cold_start_second_pass_changes: bool = False
    skipped_rows: int = 0


# ===== KNOWLEDGE GRAPH MODELS =====

class EntityKind(str, Enum):
    USER = "User"
    APP = "App"
    CONTENT_TOPIC = "ContentTopic"
    CATEGORY = "Category"
    PROVIDER = "Provider"
    POPULARITY = "Popularity"
    AGE_RESTRICTION = "AgeRestriction"
    ADS = "Ads"
    FEE = "Fee"
    INTERACTIVE_ELEMENTS = "InteractiveElements"
    QUALITY = "Quality"
    UPDATED_TIME = "UpdatedTime"
    SIZE = "Size"


class RelationKind(str, Enum):
    INTERACT = "INTERACT"
    HAVINGCT = "HAVINGCT"
    HAVINGC = "HAVINGC"
    OFFEREDBY = "OFFEREDBY"
    CONTENTR = "CONTENTR"
    HAVINGA = "HAVINGA"
    HAVINGF = "HAVINGF"
    HAVINGIE = "HAVINGIE"
    HAVINGQ = "HAVINGQ"
    HAVINGP = "HAVINGP"
    HAVINGUT = "HAVINGUT"
    HAVINGS = "HAVINGS"
    USIMILAR = "USIMILAR"
    CTSIMILAR = "CTSIMILAR"
    QSIMILAR = "QSIMILAR"
    PSIMILAR = "PSIMILAR"
    UTSIMILAR = "UTSIMILAR"
    SSIMILAR = "SSIMILAR"

    @property
    def relation_id(self) -> int:
        return RELATION_ORDER.index(self)

    @property
    def is_similarity(self) -> bool:
        return self.value.endswith("SIMILAR")


RELATION_ORDER: List[RelationKind] = list(RelationKind)

# (head kind, tail kind) per relation
RELATION_SIGNATURES: Dict[RelationKind, Tuple[EntityKind, EntityKind]] = {
    RelationKind.INTERACT: (EntityKind.USER, EntityKind.APP),
    RelationKind.HAVINGCT: (EntityKind.APP, EntityKind.CONTENT_TOPIC),
    RelationKind.HAVINGC: (EntityKind.APP, EntityKind.CATEGORY),
    RelationKind.OFFEREDBY: (EntityKind.APP, EntityKind.PROVIDER),
    RelationKind.CONTENTR: (EntityKind.APP, EntityKind.AGE_RESTRICTION),
    RelationKind.HAVINGA: (EntityKind.APP, EntityKind.ADS),
    RelationKind.HAVINGF: (EntityKind.APP, EntityKind.FEE),
    RelationKind.HAVINGIE: (EntityKind.APP, EntityKind.INTERACTIVE_ELEMENTS),
    RelationKind.HAVINGQ: (EntityKind.APP, EntityKind.QUALITY),
    RelationKind.HAVINGP: (EntityKind.APP, EntityKind.POPULARITY),
    RelationKind.HAVINGUT: (EntityKind.APP, EntityKind.UPDATED_TIME),
    RelationKind.HAVINGS: (EntityKind.APP, EntityKind.SIZE),
    RelationKind.USIMILAR: (EntityKind.USER, EntityKind.USER),
    RelationKind.CTSIMILAR: (EntityKind.CONTENT_TOPIC, EntityKind.CONTENT_TOPIC),
    RelationKind.QSIMILAR: (EntityKind.QUALITY, EntityKind.QUALITY),
    RelationKind.PSIMILAR: (EntityKind.POPULARITY, EntityKind.POPULARITY),
    RelationKind.UTSIMILAR: (EntityKind.UPDATED_TIME, EntityKind.UPDATED_TIME),
    RelationKind.SSIMILAR: (EntityKind.SIZE, EntityKind.SIZE),
}

# Relations every app carries exactly once
SINGLE_VALUED_APP_RELATIONS: Tuple[RelationKind, ...] = (
    RelationKind.HAVINGCT,
    RelationKind.HAVINGC,
    RelationKind.OFFEREDBY,
    RelationKind.CONTENTR,
    RelationKind.HAVINGA,
    RelationKind.HAVINGF,
    RelationKind.HAVINGQ,
    RelationKind.HAVINGP,
    RelationKind.HAVINGUT,
    RelationKind.HAVINGS,
)


class Triple(BaseModel):
    """(head, relation, tail) over dense entity ids"""
    model_config = ConfigDict(frozen=True)

    head: int
    relation: RelationKind
    tail: int

    def as_tuple(self) -> Tuple[int, str, int]:
        return (self.head, self.relation.value, self.tail)


# ===== EVALUATION MODELS =====

class MetricRow(BaseModel):
    """One (model, K) cell block of the comparison table"""
    model: str
    k: int
    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    map: float = Field(ge=0.0, le=1.0)
    users: int  # users with a nonempty relevant set


class MetricReport(BaseModel):
    """Per-model, per-K precision / recall / MAP"""
    rows: List[MetricRow]

    def get(self, model: str, k: int) -> MetricRow:
        for row in self.rows:
            if row.model == model and row.k == k:
                return row
        raise KeyError(f"no metrics for model={model} K={k}")


class Recommendation(BaseModel):
    """One ranked entry returned by a recommender"""
    rank: int
    app_id: str
    score: float


class SweepRow(BaseModel):
    """Sensitivity-sweep result for one hyperparameter value"""
    param: str
    value: str
    k: int
    precision: float
    recall: float
    map: float


# ===== PIPELINE MODELS =====

class StageRecord(BaseModel):
    """Manifest entry written after a stage succeeds"""
    stage: str
    config_hash: str
    input_hash: str
    seed: int
    artifacts: Dict[str, str]  # logical name -> path


class PipelineManifest(BaseModel):
    """Paths of all produced artifacts with the hashes that produced them"""
    version: int = 1
    stages: Dict[str, StageRecord] = {}

    def record_for(self, stage: str) -> Optional[StageRecord]:
        return self.stages.get(stage)

"""
Error hierarchy for the recommendation engine.

Every failure the CLI can report derives from KGEPError; the CLI maps it to
exit code 1 and a single line on stderr.
"""

from typing import Optional, Tuple


class KGEPError(Exception):
    """Base class for all engine errors"""


class ConfigError(KGEPError):
    """Invalid or unreadable engine configuration"""


class DatasetValidationError(KGEPError):
    """A row of an input file failed validation"""

    def __init__(self, file: str, line: int, field: str, message: str):
        self.file = file
        self.line = line
        self.field = field
        super().__init__(f"{file}:{line}: field '{field}': {message}")


class EmptyDatasetError(KGEPError):
    """Nothing left to model"""


class CorpusError(KGEPError):
    """Readme corpus unusable after preprocessing"""


class TopicModelError(KGEPError):
    """Invalid topic model request or file"""


class SchemaViolationError(KGEPError):
    """A triple does not match its relation's (head kind, tail kind) signature"""

    def __init__(self, triple: Tuple[int, str, int], message: str):
        self.triple = triple
        super().__init__(f"triple {triple}: {message}")


class UnknownEntityError(KGEPError):
    """A user, app or entity id is not present in the knowledge graph"""


class TrainingDivergedError(KGEPError):
    """Non-finite loss or gradient during training"""

    def __init__(self, stage: str, epoch: int, message: str, batch: Optional[int] = None):
        self.stage = stage
        self.epoch = epoch
        self.batch = batch
        where = f"epoch {epoch}" + (f", batch {batch}" if batch is not None else "")
        super().__init__(f"{stage} diverged at {where}: {message}")


class CheckpointError(KGEPError):
    """Unreadable or mismatched checkpoint file"""


class StageError(KGEPError):
    """A pipeline stage failed"""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")

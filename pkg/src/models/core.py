"""
Core Pydantic models for event ingestion

These models describe the raw side of the toolkit: vocabularies of countries and
actions, individual event tokens, the column layout of an event log and the report
produced while ingesting one.

Model Categories:
- Vocabularies: Vocabulary
- Events: EventToken, ColumnSchema, TimeBinning
- Action metadata: QuadClass, ActionMetadata
- Reporting: MalformedLine, IngestReport
"""
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator


class Vocabulary(BaseModel):
    """Ordered bijection between string labels and contiguous 0-based indices.

    Labels are appended in first-appearance order while an event log is read.
    `canonicalized()` returns the lexicographically sorted variant used for
    reproducible exports.

    Attributes:
        labels: labels in index order
    """
    labels: List[str] = Field(default_factory=list)
    _index: Dict[str, int] = PrivateAttr(default_factory=dict)

    @field_validator("labels")
    @classmethod
    def validate_unique(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("vocabulary labels must be unique")
        return v

    def model_post_init(self, __context) -> None:
        self._index = {label: k for k, label in enumerate(self.labels)}

    @property
    def index(self) -> Dict[str, int]:
        return dict(self._index)

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def add(self, label: str) -> int:
        """Return the index of `label`, appending it if unseen"""
        k = self._index.get(label)
        if k is None:
            k = len(self.labels)
            self.labels.append(label)
            self._index[label] = k
        return k

    def lookup(self, label: str) -> int:
        return self._index[label]

    def canonicalized(self) -> "Vocabulary":
        return Vocabulary(labels=sorted(self.labels))


class EventToken(BaseModel):
    """One event "country i took action a toward country j during time step t" """
    model_config = ConfigDict(frozen=True)

    sender: int = Field(ge=0)
    receiver: int = Field(ge=0)
    action: int = Field(ge=0)
    time: int = Field(ge=0)

    @model_validator(mode="after")
    def check_not_self_loop(self):
        if self.sender == self.receiver:
            raise ValueError("sender and receiver must differ")
        return self

    def key(self):
        return (self.sender, self.receiver, self.action, self.time)


class ColumnSchema(BaseModel):
    """Positions of the event fields in a delimited line"""
    sender: int = 0
    receiver: int = 1
    action: int = 2
    time: int = 3
    delimiter: str = "\t"
    comment_prefix: str = "#"

    @property
    def width(self) -> int:
        return max(self.sender, self.receiver, self.action, self.time) + 1


class BinningMode(str, Enum):
    MONTHLY = "monthly"
    FIXED_WIDTH = "fixed-width"


class TimeBinning(BaseModel):
    """Maps a raw time column onto 0-based time-step indices.

    Monthly binning parses ISO dates (``1995-03`` or ``1995-03-14``) and counts
    calendar months from `anchor`. Fixed-width binning reads integers and maps
    ``(value - origin) // width``; width 1 with origin 0 passes pre-binned steps through.
    """
    mode: BinningMode = BinningMode.MONTHLY
    anchor: Optional[str] = Field(default=None, description="anchor month, YYYY-MM")
    width: int = Field(default=1, ge=1)
    origin: int = 0
    n_steps: Optional[int] = Field(default=None, ge=1, description="force T")

    @model_validator(mode="after")
    def check_anchor(self):
        if self.mode == BinningMode.MONTHLY and self.anchor is None:
            raise ValueError("monthly binning needs an anchor month")
        return self

    @classmethod
    def pre_binned(cls, n_steps: Optional[int] = None) -> "TimeBinning":
        return cls(mode=BinningMode.FIXED_WIDTH, width=1, origin=0, n_steps=n_steps)


class QuadClass(str, Enum):
    """Coarse sentiment classes over the twenty root action codes"""
    NEUTRAL = "Neutral"
    VERBAL_COOPERATION = "VerbalCoop"
    MATERIAL_COOPERATION = "MaterialCoop"
    VERBAL_CONFLICT = "VerbalConflict"
    MATERIAL_CONFLICT = "MaterialConflict"


N_ACTION_CODES = 20


def quadclass_of(code: int) -> QuadClass:
    """QuadClass of a root action code; code 16 belongs to material conflict"""
    if not 1 <= code <= N_ACTION_CODES:
        raise ValueError(f"action code {code} outside 1..{N_ACTION_CODES}")
    if code == 1:
        return QuadClass.NEUTRAL
    if code <= 5:
        return QuadClass.VERBAL_COOPERATION
    if code <= 7:
        return QuadClass.MATERIAL_COOPERATION
    if code <= 15:
        return QuadClass.VERBAL_CONFLICT
    return QuadClass.MATERIAL_CONFLICT


class ActionMetadata(BaseModel):
    """QuadClass lookup for action codes 1..20"""
    quadclass: Dict[int, QuadClass]

    @field_validator("quadclass")
    @classmethod
    def validate_complete(cls, v):
        if sorted(v) != list(range(1, N_ACTION_CODES + 1)):
            raise ValueError("every action code 1..20 needs exactly one class")
        return v

    @classmethod
    def cameo(cls) -> "ActionMetadata":
        return cls(quadclass={code: quadclass_of(code) for code in range(1, N_ACTION_CODES + 1)})

    def for_vocabulary(self, actions: Vocabulary) -> List[QuadClass]:
        """QuadClass of every action index in an action vocabulary"""
        return [self.quadclass[int(label)] for label in actions.labels]


class MalformedLine(BaseModel):
    line_no: int
    reason: str


class IngestReport(BaseModel):
    """Counts gathered while parsing an event log"""
    lines_read: int = 0
    parsed: int = 0
    self_loops: int = 0
    malformed: int = 0
    comments: int = 0
    n_steps: int = 0
    malformed_lines: List[MalformedLine] = Field(default_factory=list)
    quadclass_totals: Dict[QuadClass, int] = Field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return self.self_loops + self.malformed

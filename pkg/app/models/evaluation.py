from enum import Enum
from typing import Dict, List, Literal

from pydantic import BaseModel, ConfigDict, Field


class MatchMode(str, Enum):
    """TI/TC match triggers, AI/AC match argument fillers"""

    TI = "TI"
    TC = "TC"
    AI = "AI"
    AC = "AC"


ArgumentAnchor = Literal["type", "trigger"]


class PRF(BaseModel):
    model_config = ConfigDict(frozen=True)

    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    tp: int = Field(ge=0)
    pred_total: int = Field(ge=0)
    gold_total: int = Field(ge=0)


class SentenceDiagnostics(BaseModel):
    sentence_id: str
    counts: Dict[str, List[int]]


class EvalReport(BaseModel):
    conventions: Dict[str, str]
    TI: PRF
    TC: PRF
    AI: PRF
    AC: PRF
    sentences: List[SentenceDiagnostics] = Field(default_factory=list)

    def get(self, mode: MatchMode) -> PRF:
        return getattr(self, mode.value)

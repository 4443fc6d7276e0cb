from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


@dataclass(frozen=True)
class TokenEmbeddings:
    """Token embedding rows (n x d, float64) of one sentence or event type"""

    owner: str
    rows: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.rows.shape[1])


@dataclass(frozen=True)
class EmbeddingStore:
    dimension: int
    sentences: Dict[str, TokenEmbeddings] = field(default_factory=dict)
    types: Dict[str, TokenEmbeddings] = field(default_factory=dict)


class RecallCandidate(BaseModel):
    model_config = ConfigDict(frozen=True)

    type_id: str
    raw_score: float
    confidence: float = Field(default=0.0, ge=0.0, le=1.0)


class TrainingPair(BaseModel):
    """One sentence with its gold candidate set and negative types"""

    model_config = ConfigDict(frozen=True)

    sentence_id: str
    positives: Tuple[str, ...] = Field(min_length=1)
    negatives: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_disjoint(self) -> "TrainingPair":
        overlap = set(self.positives) & set(self.negatives)
        if overlap:
            raise ValueError(f"types are both positive and negative: {sorted(overlap)}")
        return self


class RecallConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # "top 15 similar event types"
    k: int = Field(default=15, ge=1)
    # the margin is never reported for the trained encoder
    margin: float = Field(default=0.3, gt=0.0)


PartitionStrategy = Literal["random", "average", "level"]


class PartitionPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    strategy: PartitionStrategy
    parts: Tuple[Tuple[RecallCandidate, ...], ...]
    seed: Optional[int] = None

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(part) for part in self.parts)

from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .llm import DecodingParams

# role name -> filler surface strings, keys in the event type's role order
RoleMap = Dict[str, List[str]]

NONE_OF_THEM = "NONE_OF_THEM"


class VoteResult(str, Enum):
    VALID = "valid"
    INVALID = "invalid"
    TIE = "tie"


class Verdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    annotator: str
    decision: Literal["valid", "invalid"]


class RefinementBallot(BaseModel):
    model_config = ConfigDict(frozen=True)

    annotator: str
    # a candidate type id or NONE_OF_THEM
    choice: str


class DisputeRecord(BaseModel):
    """A role whose annotator proposals are nonempty and pairwise disjoint"""

    model_config = ConfigDict(frozen=True)

    role: str
    proposals: Tuple[Tuple[str, ...], ...]


class AnnotationConfig(BaseModel):
    """Collaborative annotation settings; annotators name configured backends"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    # empty only until a run needs it; the annotate command rejects an empty roster
    annotators: List[str] = Field(default_factory=list)
    adjudicator: Optional[str] = None
    # "capping the maximum number of voting rounds at five"
    max_filter_rounds: int = Field(default=5, ge=1)
    max_refinement_rounds: int = Field(default=5, ge=1)
    vote_threshold_mode: Literal["strict_majority", "at_least_half"] = "strict_majority"
    max_parse_attempts: int = Field(default=3, ge=1)
    # "we set the temperature to 0.5"
    decoding: DecodingParams = DecodingParams(temperature=0.5, max_output_tokens=1024, greedy=False)

    @model_validator(mode="after")
    def _unique_annotators(self) -> "AnnotationConfig":
        if len(set(self.annotators)) != len(self.annotators):
            raise ValueError("annotators must be distinct backends")
        return self


class FilterOutcome(BaseModel):
    keep: bool
    rounds: int
    verdicts: Tuple[Verdict, ...]
    unresolved: bool = False


class RefineOutcome(BaseModel):
    type_id: Optional[str]
    rounds: int
    ballots: Tuple[RefinementBallot, ...]
    unresolved: bool = False

    @property
    def dropped_none(self) -> bool:
        return self.type_id is None and not self.unresolved


class AnnotationReport(BaseModel):
    """Run counters; every field is a commutative sum over records"""

    records: int = 0
    candidates: int = 0
    filtered: int = 0
    refined: int = 0
    dropped_none: int = 0
    disputes: int = 0
    unresolved: int = 0
    quarantined: int = 0
    filter_rounds: Dict[int, int] = Field(default_factory=dict)
    refinement_rounds: Dict[int, int] = Field(default_factory=dict)
    template_digests: Dict[str, str] = Field(default_factory=dict)

    def merge(self, other: "AnnotationReport") -> "AnnotationReport":
        counters = {
            name: getattr(self, name) + getattr(other, name)
            for name in ("records", "candidates", "filtered", "refined",
                         "dropped_none", "disputes", "unresolved", "quarantined")
        }
        return AnnotationReport(
            **counters,
            filter_rounds=_merge_histogram(self.filter_rounds, other.filter_rounds),
            refinement_rounds=_merge_histogram(self.refinement_rounds, other.refinement_rounds),
            template_digests={**self.template_digests, **other.template_digests},
        )


def _merge_histogram(left: Dict[int, int], right: Dict[int, int]) -> Dict[int, int]:
    merged = dict(left)
    for key, count in right.items():
        merged[key] = merged.get(key, 0) + count
    return dict(sorted(merged.items()))

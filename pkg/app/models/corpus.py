from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Span(BaseModel):
    """Character span [start, end) of a sentence plus its surface string"""

    model_config = ConfigDict(frozen=True)

    start: int = Field(ge=0)
    end: int
    surface: str

    @model_validator(mode="after")
    def _check_order(self) -> "Span":
        if self.end <= self.start:
            raise ValueError(f"span end {self.end} must exceed start {self.start}")
        return self

    def fits(self, text: str) -> bool:
        """True when the span lies inside text and its surface matches"""
        return self.end <= len(text) and text[self.start:self.end] == self.surface

    @property
    def key(self) -> Tuple[int, int]:
        return (self.start, self.end)


class TriggerCandidate(BaseModel):
    """A distantly-supervised trigger with its candidate type ids"""

    model_config = ConfigDict(frozen=True)

    start: int = Field(ge=0)
    end: int
    surface: str
    candidate_types: Tuple[str, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_order(self) -> "TriggerCandidate":
        if self.end <= self.start:
            raise ValueError(f"candidate end {self.end} must exceed start {self.start}")
        return self

    @field_validator("candidate_types")
    @classmethod
    def _no_duplicates(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        if len(set(value)) != len(value):
            raise ValueError("candidate_types contains duplicates")
        return value

    @property
    def span(self) -> Span:
        return Span(start=self.start, end=self.end, surface=self.surface)


class EventMention(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    trigger: Span
    type_id: str = Field(alias="type")


class ArgumentMention(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: str
    fillers: Tuple[Span, ...] = ()


class EventRecord(BaseModel):
    """An event mention together with its argument mentions"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    trigger: Span
    type_id: str = Field(alias="type")
    arguments: Tuple[ArgumentMention, ...] = ()

    @property
    def key(self) -> Tuple[int, int, str]:
        return (self.trigger.start, self.trigger.end, self.type_id)


class SentenceRecord(BaseModel):
    """One sentence with its pre-annotation candidates and finished events"""

    model_config = ConfigDict(frozen=True, extra="ignore")

    id: str
    text: str
    candidates: Tuple[TriggerCandidate, ...] = ()
    events: Tuple[EventRecord, ...] = ()

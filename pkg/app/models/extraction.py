from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .llm import DecodingParams
from .retrieval import PartitionStrategy, RecallConfig

# role name -> filler surface strings
ParsedArguments = Dict[str, List[str]]


class ExtractConfig(BaseModel):
    """Two-stage extraction settings (defaults: k=15, N=2, level, greedy 500)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    recall: RecallConfig = RecallConfig()
    # "two partitions with level strategy"
    partitions: int = Field(default=2, ge=1)
    strategy: PartitionStrategy = "level"
    seed: Optional[int] = None
    # "a maximum output length of 500"
    decoding: DecodingParams = DecodingParams(temperature=0.0, max_output_tokens=500, greedy=True)
    ed_backend: Optional[str] = None
    eae_backend: Optional[str] = None
    max_parse_attempts: int = Field(default=3, ge=1)
    # false partitions the whole ontology instead of the recalled top-k
    use_recall: bool = True

    @property
    def k(self) -> int:
        return self.recall.k

    @model_validator(mode="after")
    def _check_partitions(self) -> "ExtractConfig":
        if self.partitions > self.recall.k:
            raise ValueError(f"partitions ({self.partitions}) exceeds k ({self.recall.k})")
        if self.strategy == "random" and self.seed is None:
            raise ValueError("seed required for the random strategy")
        return self


class ParsedEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    identifier: str
    type_id: str
    trigger: str


class ExtractionReport(BaseModel):
    sentences: int = 0
    events: int = 0
    arguments: int = 0
    parse_retries: int = 0
    dropped_ungrounded: int = 0
    dropped_out_of_partition: int = 0
    failed_partitions: int = 0
    quarantined: int = 0
    template_digests: Dict[str, str] = Field(default_factory=dict)

    def merge(self, other: "ExtractionReport") -> "ExtractionReport":
        counters = {
            name: getattr(self, name) + getattr(other, name)
            for name in ("sentences", "events", "arguments", "parse_retries", "dropped_ungrounded",
                         "dropped_out_of_partition", "failed_partitions", "quarantined")
        }
        return ExtractionReport(**counters, template_digests={**self.template_digests, **other.template_digests})

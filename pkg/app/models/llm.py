from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DecodingParams(BaseModel):
    """Sampling settings sent with every request; greedy overrides temperature"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    temperature: float = Field(default=0.5, ge=0.0)
    max_output_tokens: int = Field(default=500, ge=1)
    greedy: bool = False

    @property
    def effective_temperature(self) -> float:
        return 0.0 if self.greedy else self.temperature


class PromptRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    system_text: str = ""
    user_text: str = Field(min_length=1)
    params: DecodingParams = DecodingParams()
    # caller label, part of the replay digest
    tag: str = ""


class Completion(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    backend_name: str
    attempt: int = Field(ge=1)


class BackendDescriptor(BaseModel):
    """A named chat-completion backend from the run configuration"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    kind: Literal["http", "scripted"]
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: Optional[str] = None
    script_path: Optional[Path] = None
    max_concurrent_requests: int = Field(default=4, ge=1)
    timeout_seconds: float = Field(default=60.0, gt=0.0)
    transport_retries: int = Field(default=3, ge=1)
    # exponential backoff base between transport retries
    backoff_seconds: float = Field(default=1.0, ge=0.0)
    # simulated latency for scripted backends, lets tests observe interleaving
    latency_seconds: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_kind_fields(self) -> "BackendDescriptor":
        if self.kind == "http" and not self.endpoint:
            raise ValueError(f"http backend {self.name!r} needs an endpoint")
        return self

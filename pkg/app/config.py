"""Run configuration.

Precedence, highest first: command-line flags, the YAML config file, MTEE_*
environment variables, a local .env file, then the defaults below.

Defaults and where they come from:
  extraction.recall.k = 15          top 15 similar event types are recalled
  extraction.partitions = 2         two partitions with the level strategy
  extraction.strategy = "level"
  extraction.decoding               greedy, at most 500 output tokens
  annotation.decoding.temperature   0.5 for every annotation call
  annotation.max_*_rounds = 5       voting is capped at five rounds
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.exceptions import ConfigError
from app.models.annotation import AnnotationConfig
from app.models.evaluation import ArgumentAnchor
from app.models.extraction import ExtractConfig
from app.models.llm import BackendDescriptor

INPUT_PATHS = ("ontology", "corpus", "embeddings", "gold", "predictions")


class PathsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # required by every command except eval
    ontology: Optional[Path] = None
    corpus: Optional[Path] = None
    embeddings: Optional[Path] = None
    gold: Optional[Path] = None
    predictions: Optional[Path] = None
    output: Optional[Path] = None
    report: Optional[Path] = None
    quarantine: Optional[Path] = None
    metrics: Optional[Path] = None

    @model_validator(mode="after")
    def _inputs_exist(self) -> "PathsConfig":
        for name in INPUT_PATHS:
            value = getattr(self, name)
            if value is not None and not value.exists():
                raise ValueError(f"paths.{name} does not exist: {value}")
        return self


class EvaluationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # "type": argument keys carry the event type; "trigger" adds the trigger span
    argument_anchor: ArgumentAnchor = "type"


class AppConfig(BaseSettings):
    """Validated run configuration; unknown keys are rejected"""

    model_config = SettingsConfigDict(
        env_prefix="MTEE_",
        env_nested_delimiter="__",
        env_file=".env",
        extra="forbid",
    )

    paths: PathsConfig = PathsConfig()
    backends: List[BackendDescriptor] = Field(default_factory=list)
    annotation: AnnotationConfig = AnnotationConfig()
    extraction: ExtractConfig = ExtractConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    parallelism: int = Field(default=4, ge=1)
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    @model_validator(mode="after")
    def _check_backend_refs(self) -> "AppConfig":
        names = [b.name for b in self.backends]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"duplicate backend names: {duplicates}")
        refs = [("annotation.annotators", n) for n in self.annotation.annotators]
        refs += [("annotation.adjudicator", self.annotation.adjudicator),
                 ("extraction.ed_backend", self.extraction.ed_backend),
                 ("extraction.eae_backend", self.extraction.eae_backend)]
        for field, name in refs:
            if name is not None and name not in names:
                raise ValueError(f"{field} names unknown backend {name!r}")
        return self


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def set_dotted(target: Dict[str, Any], dotted: str, value: Any) -> Dict[str, Any]:
    """Return target with value stored under a dotted key path such as extraction.recall.k"""
    parts = [part for part in dotted.split(".") if part]
    if not parts:
        raise ConfigError(f"empty key in override {dotted!r}")
    nested: Any = value
    for part in reversed(parts):
        nested = {part: nested}
    return deep_merge(target, nested)


def parse_assignment(assignment: str) -> Dict[str, Any]:
    """`dotted.key=value` with the value read as a YAML scalar"""
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(f"override {assignment!r} is not key=value")
    return set_dotted({}, key.strip(), yaml.safe_load(raw) if raw.strip() else None)


def _anchor_paths(data: Dict[str, Any], base: Path) -> Dict[str, Any]:
    # relative paths in a config file are relative to that file
    def anchor(value: Any) -> Any:
        if isinstance(value, str) and value and not Path(value).is_absolute():
            return str(base / value)
        return value

    data = dict(data)
    if isinstance(data.get("paths"), dict):
        data["paths"] = {key: anchor(value) for key, value in data["paths"].items()}
    if isinstance(data.get("backends"), list):
        data["backends"] = [
            {**b, "script_path": anchor(b.get("script_path"))} if isinstance(b, dict) and "script_path" in b else b
            for b in data["backends"]
        ]
    return data


def format_validation_error(exc: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in error['loc']) or '<config>'}: {error['msg']}" for error in exc.errors())


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> AppConfig:
    """Read the YAML file, merge the overrides over it and validate"""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            with path.open("r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping")
        data = _anchor_paths(loaded or {}, path.parent)
    data = deep_merge(data, overrides or {})
    try:
        return AppConfig(**data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {format_validation_error(exc)}") from exc

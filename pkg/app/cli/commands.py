import asyncio
import json
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Any, Callable, Dict, Iterator, List, Optional, Sequence

from app.config import AppConfig
from app.core.corpus import load_corpus, validate_corpus, write_corpus
from app.core.embeddings import load_embedding_store, synthesize_store
from app.core.ontology import Ontology, load_ontology, role_counts, validate_ontology
from app.core.partition import compare_strategies, make_plan
from app.core.recall import recall_topk
from app.exceptions import ConfigError
from app.llm.gateway import Gateway
from app.models.corpus import SentenceRecord
from app.models.retrieval import EmbeddingStore
from app.monitoring.metrics import write_metrics
from app.services.annotation import run_annotation
from app.services.batch import QuarantineEntry, write_quarantine
from app.services.evaluation import dump_report, evaluate
from app.services.extraction import run_extraction, whole_ontology
from app.utils.logging import get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_QUARANTINE = 3
EXIT_VIOLATIONS = 4

COMMANDS = ("annotate", "extract", "recall", "partition", "eval", "validate")


@contextmanager
def _sink(path: Optional[Path], stdout: IO[bytes]) -> Iterator[IO[bytes]]:
    if path is None:
        yield stdout
        stdout.flush()
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        yield fh


def _require(config: AppConfig, name: str) -> Path:
    value = getattr(config.paths, name)
    if value is None:
        raise ConfigError(f"paths.{name} is required for this command")
    return value


def _ontology(config: AppConfig) -> Ontology:
    with _require(config, "ontology").open("rb") as fh:
        return load_ontology(fh)


def _corpus(path: Path, ontology: Optional[Ontology] = None) -> List[SentenceRecord]:
    with path.open("rb") as fh:
        return load_corpus(fh, ontology)


def _store(config: AppConfig, ontology: Ontology, records: Sequence[SentenceRecord],
           synthesize: Optional[int]) -> EmbeddingStore:
    if synthesize is not None:
        return synthesize_store(ontology, records, dimension=synthesize, seed=config.extraction.seed or 0)
    with _require(config, "embeddings").open("rb") as fh:
        return load_embedding_store(fh)


def _guard_inputs(config: AppConfig) -> None:
    inputs = {getattr(config.paths, name) for name in ("ontology", "corpus", "embeddings", "gold", "predictions")}
    for name in ("output", "report", "quarantine", "metrics"):
        target = getattr(config.paths, name)
        if target is not None and target in inputs:
            raise ConfigError(f"paths.{name} would overwrite an input file: {target}")


def _write_json(path: Optional[Path], payload: str, stdout: IO[bytes]) -> None:
    if path is None:
        logger.info("Report", report=json.loads(payload))
        return
    with _sink(path, stdout) as fh:
        fh.write(payload.encode("utf-8"))


def _finish(config: AppConfig, quarantine: List[QuarantineEntry], stdout: IO[bytes]) -> int:
    if quarantine and config.paths.quarantine is not None:
        with _sink(config.paths.quarantine, stdout) as fh:
            write_quarantine(quarantine, fh)
    return EXIT_QUARANTINE if quarantine else EXIT_OK


def _gateway(config: AppConfig) -> Gateway:
    return Gateway.from_descriptors(config.backends)


async def _annotate(config: AppConfig, stdout: IO[bytes]) -> int:
    ontology = _ontology(config)
    records = _corpus(_require(config, "corpus"), ontology)
    gateway = _gateway(config)
    try:
        annotated, report, quarantine = await run_annotation(
            records, ontology, config.annotation, gateway, config.parallelism)
    finally:
        await gateway.aclose()
    with _sink(config.paths.output, stdout) as fh:
        write_corpus(annotated, fh)
    _write_json(config.paths.report, dump_report(report), stdout)
    return _finish(config, quarantine, stdout)


async def _extract(config: AppConfig, stdout: IO[bytes], synthesize: Optional[int]) -> int:
    ontology = _ontology(config)
    records = _corpus(_require(config, "corpus"), ontology)
    store = _store(config, ontology, records, synthesize) if config.extraction.use_recall else None
    gateway = _gateway(config)
    try:
        predictions, report, quarantine = await run_extraction(
            records, ontology, store, config.extraction, gateway, config.parallelism)
    finally:
        await gateway.aclose()
    with _sink(config.paths.output, stdout) as fh:
        write_corpus(predictions, fh)
    _write_json(config.paths.report, dump_report(report), stdout)
    return _finish(config, quarantine, stdout)


def _selected(records: Sequence[SentenceRecord], sentence_id: Optional[str]) -> List[SentenceRecord]:
    if sentence_id is None:
        return list(records)
    chosen = [r for r in records if r.id == sentence_id]
    if not chosen:
        raise ConfigError(f"sentence {sentence_id!r} is not in the corpus")
    return chosen


def _recall(config: AppConfig, stdout: IO[bytes], sentence_id: Optional[str], synthesize: Optional[int]) -> int:
    ontology = _ontology(config)
    records = _corpus(_require(config, "corpus"), ontology)
    store = _store(config, ontology, records, synthesize)
    for record in _selected(records, sentence_id):
        cands = recall_topk(record.id, store, ontology, config.extraction.k)
        line = {"sentence_id": record.id, "candidates": [c.model_dump(mode="json") for c in cands]}
        stdout.write((json.dumps(line, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8"))
    stdout.flush()
    return EXIT_OK


def _partition(config: AppConfig, stdout: IO[bytes], sentence_id: Optional[str],
               synthesize: Optional[int], compare: bool) -> int:
    ontology = _ontology(config)
    cfg = config.extraction
    if cfg.use_recall:
        records = _corpus(_require(config, "corpus"), ontology)
        store = _store(config, ontology, records, synthesize)
        targets = [(r.id, recall_topk(r.id, store, ontology, cfg.k)) for r in _selected(records, sentence_id)]
    else:
        targets = [(sentence_id, whole_ontology(ontology))]
    for owner, cands in targets:
        n = min(cfg.partitions, len(cands))
        if compare:
            line: Dict[str, Any] = {"sentence_id": owner, "strategies": compare_strategies(cands, n, cfg.seed or 0)}
            stdout.write((json.dumps(line, ensure_ascii=False, sort_keys=True) + "\n").encode("utf-8"))
            continue
        plan = make_plan(cfg.strategy, cands, n, cfg.seed)
        for index, part in enumerate(plan.parts):
            line = {"sentence_id": owner, "strategy": plan.strategy, "seed": plan.seed, "part": index,
                    "types": [c.model_dump(mode="json") for c in part]}
            stdout.write((json.dumps(line, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8"))
    stdout.flush()
    return EXIT_OK


def _eval(config: AppConfig, stdout: IO[bytes]) -> int:
    predictions = _corpus(_require(config, "predictions"))
    gold = _corpus(_require(config, "gold"))
    report = evaluate(predictions, gold, anchor=config.evaluation.argument_anchor)
    payload = dump_report(report)
    with _sink(config.paths.report, stdout) as fh:
        fh.write(payload.encode("utf-8"))
    return EXIT_OK


def _validate(config: AppConfig, stdout: IO[bytes]) -> int:
    ontology = _ontology(config)
    violations = validate_ontology(ontology)
    event_types, role_types = role_counts(ontology)
    summary: Dict[str, Any] = {"event_types": event_types, "role_types": role_types}
    if config.paths.corpus is not None:
        records = _corpus(config.paths.corpus)
        violations += validate_corpus(records, ontology)
        summary["records"] = len(records)
        if config.paths.embeddings is not None:
            with config.paths.embeddings.open("rb") as fh:
                store = load_embedding_store(fh)
            missing = [r.id for r in records if r.id not in store.sentences]
            missing += [t for t in ontology.ids if t not in store.types]
            violations += [f"missing embedding: {owner}" for owner in missing]
    summary["violations"] = violations
    stdout.write((json.dumps(summary, ensure_ascii=False, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    stdout.flush()
    return EXIT_VIOLATIONS if violations else EXIT_OK


def dispatch(command: str, config: AppConfig, sentence_id: Optional[str] = None,
             synthesize: Optional[int] = None, compare: bool = False,
             stdout: Optional[IO[bytes]] = None) -> int:
    """Run one command and return its exit status"""
    stdout = stdout if stdout is not None else sys.stdout.buffer
    _guard_inputs(config)
    handlers: Dict[str, Callable[[], int]] = {
        "annotate": lambda: asyncio.run(_annotate(config, stdout)),
        "extract": lambda: asyncio.run(_extract(config, stdout, synthesize)),
        "recall": lambda: _recall(config, stdout, sentence_id, synthesize),
        "partition": lambda: _partition(config, stdout, sentence_id, synthesize, compare),
        "eval": lambda: _eval(config, stdout),
        "validate": lambda: _validate(config, stdout),
    }
    if command not in handlers:
        raise ConfigError(f"unknown command {command!r}")
    logger.info("Command started", command=command, parallelism=config.parallelism)
    status = handlers[command]()
    if config.paths.metrics is not None:
        write_metrics(config.paths.metrics)
    logger.info("Command finished", command=command, status=status)
    return status

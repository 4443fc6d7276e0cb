import asyncio
import json
from typing import Dict, List, Optional, Sequence, Set, Tuple

from app.core.corpus import canonicalize_record, ground_fillers, ground_surface
from app.core.ontology import Ontology
from app.core.output_parser import ArgumentParser, DetectionParse, DetectionParser
from app.core.partition import make_plan
from app.core.recall import recall_topk
from app.exceptions import ConfigError, ParseExhaustedError
from app.llm.backends import ChatBackend
from app.llm.gateway import Gateway, complete_parsed
from app.models.corpus import ArgumentMention, EventMention, EventRecord, SentenceRecord, Span
from app.models.extraction import ExtractConfig, ExtractionReport, ParsedArguments
from app.models.llm import DecodingParams, PromptRequest
from app.models.ontology import EventTypeDef
from app.models.retrieval import EmbeddingStore, RecallCandidate
from app.prompts import render, template_digest
from app.services.batch import BatchRunner, QuarantineEntry
from app.utils.logging import get_logger, log_dropped

logger = get_logger(__name__)

EXTRACTION_TEMPLATES = ("ed", "eae")


def _literal(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def _docstring(description: str) -> str:
    return " ".join(description.split()).replace('"""', "'''").rstrip("\\")


def render_schema_block(types: Sequence[EventTypeDef], ontology: Ontology) -> str:
    """Class-style declarations, one per type, in the given order"""
    declarations = []
    for type_def in types:
        lines = [f"class {ontology.identifier(type_def.id)}(Event):"]
        if type_def.description.strip():
            lines.append(f'    """{_docstring(type_def.description)}"""')
        for role, field in ontology.role_fields(type_def.id).items():
            lines.append(f"    {field}: List[str]  # {' '.join(role.split())}")
        if len(lines) == 1:
            lines.append("    pass")
        declarations.append("\n".join(lines))
    return "\n\n".join(declarations)


def render_ed_prompt(part: Sequence[EventTypeDef], sentence: str, ontology: Ontology,
                     params: DecodingParams = DecodingParams(temperature=0.0, max_output_tokens=500, greedy=True)
                     ) -> PromptRequest:
    if not part:
        raise ValueError("a detection prompt needs at least one event type")
    user_text = render("ed", schema=render_schema_block(part, ontology), sentence=_literal(sentence))
    return PromptRequest(user_text=user_text, params=params, tag="ed")


def eae_answer_format(type_def: EventTypeDef, trigger: str, ontology: Ontology) -> str:
    fields = "".join(f', {field}=["..."]' for field in ontology.role_fields(type_def.id).values())
    return f"{ontology.identifier(type_def.id)}(trigger={_literal(trigger)}{fields})"


def render_eae_prompt(type_def: EventTypeDef, trigger: Span, sentence: str, ontology: Ontology,
                      params: DecodingParams = DecodingParams(temperature=0.0, max_output_tokens=500, greedy=True)
                      ) -> PromptRequest:
    user_text = render(
        "eae",
        schema=render_schema_block([type_def], ontology),
        identifier=ontology.identifier(type_def.id),
        answer_format=eae_answer_format(type_def, trigger.surface, ontology),
        trigger=_literal(trigger.surface),
        sentence=_literal(sentence),
    )
    return PromptRequest(user_text=user_text, params=params, tag="eae")


def parse_ed_output(text: str, part: Sequence[EventTypeDef], ontology: Ontology,
                    record_id: Optional[str] = None) -> DetectionParse:
    return DetectionParser(part, ontology, record_id).parse(text)


def parse_eae_output(text: str, type_def: EventTypeDef, ontology: Ontology,
                     record_id: Optional[str] = None) -> ParsedArguments:
    return ArgumentParser(type_def, ontology, record_id).parse(text)


def whole_ontology(ontology: Ontology) -> List[RecallCandidate]:
    """Every type at full confidence, in schema order; stands in for recall when it is switched off"""
    return [RecallCandidate(type_id=type_id, raw_score=0.0, confidence=1.0) for type_id in ontology.ids]


class ExtractionPipeline:
    """Recall, partition, detect per partition, then extract arguments per mention"""

    def __init__(self, ontology: Ontology, store: Optional[EmbeddingStore], cfg: ExtractConfig,
                 gateway: Gateway, runner: Optional[BatchRunner] = None):
        if cfg.ed_backend is None:
            raise ConfigError("extraction.ed_backend is not set")
        if cfg.use_recall and store is None:
            raise ConfigError("type recall needs an embedding store")
        self.ontology = ontology
        self.store = store
        self.cfg = cfg
        self.runner = runner
        self.ed_backend: ChatBackend = gateway.backend(cfg.ed_backend)
        self.eae_backend: ChatBackend = gateway.backend(cfg.eae_backend or cfg.ed_backend)

    async def recall(self, record: SentenceRecord) -> List[RecallCandidate]:
        if not self.cfg.use_recall:
            return whole_ontology(self.ontology)
        if self.runner is None:
            return recall_topk(record.id, self.store, self.ontology, self.cfg.k)
        return await self.runner.offload(recall_topk, record.id, self.store, self.ontology, self.cfg.k)

    async def _detect_part(self, record: SentenceRecord, part: Sequence[EventTypeDef],
                           report: Dict[str, int]) -> DetectionParse:
        request = render_ed_prompt(part, record.text, self.ontology, self.cfg.decoding)
        parser = DetectionParser(part, self.ontology, record.id)
        try:
            parsed, used = await complete_parsed(self.ed_backend, request, parser, self.cfg.max_parse_attempts)
        except ParseExhaustedError as e:
            log_dropped(logger, "partition_unparseable", record.id,
                        types=[t.id for t in part], attempts=e.attempts)
            report["failed_partitions"] += 1
            report["parse_retries"] += e.attempts - 1
            return DetectionParse([], [])
        report["parse_retries"] += used - 1
        report["dropped_out_of_partition"] += len(parsed.out_of_partition)
        return parsed

    async def detect_events(self, record: SentenceRecord,
                            report: Optional[Dict[str, int]] = None) -> List[EventMention]:
        report = report if report is not None else _counters()
        cands = await self.recall(record)
        if not cands:
            return []
        n = min(self.cfg.partitions, len(cands))
        plan = make_plan(self.cfg.strategy, cands, n, self.cfg.seed)
        parts = [[self.ontology.get(c.type_id) for c in part] for part in plan.parts]
        parsed = await asyncio.gather(*(self._detect_part(record, part, report) for part in parts))

        mentions: List[EventMention] = []
        used: Dict[str, Set[Tuple[int, int]]] = {}
        for parse in parsed:
            for event in parse.events:
                span = ground_surface(record.text, event.trigger, used.setdefault(event.type_id, set()))
                if span is None:
                    log_dropped(logger, "ungrounded_trigger", record.id, trigger=event.trigger, type_id=event.type_id)
                    report["dropped_ungrounded"] += 1
                    continue
                used[event.type_id].add(span.key)
                mention = EventMention(trigger=span, type_id=event.type_id)
                if mention not in mentions:
                    mentions.append(mention)
        return sorted(mentions, key=lambda m: (m.trigger.start, m.trigger.end, m.type_id))

    async def extract_arguments(self, record: SentenceRecord, mention: EventMention,
                                report: Optional[Dict[str, int]] = None) -> List[ArgumentMention]:
        report = report if report is not None else _counters()
        type_def = self.ontology.get(mention.type_id)
        if not type_def.roles:
            return []
        request = render_eae_prompt(type_def, mention.trigger, record.text, self.ontology, self.cfg.decoding)
        parser = ArgumentParser(type_def, self.ontology, record.id)
        try:
            parsed, used = await complete_parsed(self.eae_backend, request, parser, self.cfg.max_parse_attempts)
        except ParseExhaustedError as e:
            log_dropped(logger, "arguments_unparseable", record.id, type_id=mention.type_id, attempts=e.attempts)
            report["parse_retries"] += e.attempts - 1
            return []
        report["parse_retries"] += used - 1

        arguments = []
        for role in sorted(parsed):
            spans, misses = ground_fillers(record.text, parsed[role])
            for miss in misses:
                log_dropped(logger, "ungrounded_filler", record.id, role=role, filler=miss)
            report["dropped_ungrounded"] += len(misses)
            if spans:
                arguments.append(ArgumentMention(role=role, fillers=tuple(sorted(spans, key=lambda s: s.key))))
        return arguments

    async def extract_record(self, record: SentenceRecord) -> Tuple[SentenceRecord, ExtractionReport]:
        report = _counters()
        mentions = await self.detect_events(record, report)
        arguments = await asyncio.gather(*(self.extract_arguments(record, m, report) for m in mentions))
        events = tuple(EventRecord(trigger=m.trigger, type_id=m.type_id, arguments=tuple(args))
                       for m, args in zip(mentions, arguments))
        prediction = canonicalize_record(SentenceRecord(id=record.id, text=record.text, events=events))
        return prediction, ExtractionReport(
            sentences=1,
            events=len(prediction.events),
            arguments=sum(len(a.fillers) for e in prediction.events for a in e.arguments),
            **report,
        )


def _counters() -> Dict[str, int]:
    return {"parse_retries": 0, "dropped_ungrounded": 0, "dropped_out_of_partition": 0, "failed_partitions": 0}


async def run_extraction(corpus: Sequence[SentenceRecord], ontology: Ontology, store: Optional[EmbeddingStore],
                         cfg: ExtractConfig, gateway: Gateway, parallelism: int = 4
                         ) -> Tuple[List[SentenceRecord], ExtractionReport, List[QuarantineEntry]]:
    """Predict events for every record; failing records go to the quarantine list"""
    async with BatchRunner(parallelism) as runner:
        pipeline = ExtractionPipeline(ontology, store, cfg, gateway, runner)
        results, quarantine = await runner.run(corpus, pipeline.extract_record, stage="extract")

    report = ExtractionReport(template_digests={name: template_digest(name) for name in EXTRACTION_TEMPLATES})
    predictions: List[SentenceRecord] = []
    for result in results:
        if result is None:
            continue
        prediction, record_report = result
        predictions.append(prediction)
        report = report.merge(record_report)
    report = report.model_copy(update={"quarantined": len(quarantine)})
    logger.info("Extraction finished", sentences=report.sentences, events=report.events,
                arguments=report.arguments, quarantined=report.quarantined)
    return predictions, report, quarantine

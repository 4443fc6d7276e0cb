import asyncio
import json
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

from app.core.corpus import canonicalize_record, ground_fillers, ground_surface
from app.core.ontology import Ontology
from app.core.output_parser import FilterVerdictParser, RefinementChoiceParser, RoleMapParser
from app.exceptions import ConfigError, EngineError
from app.llm.backends import ChatBackend
from app.llm.gateway import Gateway, complete_parsed
from app.models.annotation import (NONE_OF_THEM, AnnotationConfig, AnnotationReport, DisputeRecord, FilterOutcome,
                                   RefinementBallot, RefineOutcome, RoleMap, Verdict, VoteResult)
from app.models.corpus import ArgumentMention, EventMention, EventRecord, SentenceRecord, TriggerCandidate
from app.models.llm import PromptRequest
from app.models.ontology import EventTypeDef
from app.monitoring.metrics import record_vote_rounds
from app.prompts import render, template_digest
from app.services.batch import BatchRunner, QuarantineEntry
from app.utils.logging import get_logger, log_dropped, log_vote

logger = get_logger(__name__)

ANNOTATION_TEMPLATES = ("filter", "refine", "arguments", "align", "align_multi")
MAX_OPTIONS = 25


class AttemptCounter:
    """Next attempt number per (item, annotator); keeps rising across retries and rounds"""

    def __init__(self):
        self._next: Dict[Tuple[str, str], int] = {}

    def start(self, item: str, annotator: str) -> int:
        return self._next.get((item, annotator), 1)

    def advance(self, item: str, annotator: str, used: int) -> None:
        self._next[(item, annotator)] = self.start(item, annotator) + used


async def _ask(backend: ChatBackend, request: PromptRequest, parser, cfg: AnnotationConfig,
               counter: AttemptCounter, item: str):
    first = counter.start(item, backend.name)
    try:
        value, used = await complete_parsed(backend, request, parser, cfg.max_parse_attempts, first_attempt=first)
    except Exception:
        counter.advance(item, backend.name, cfg.max_parse_attempts)
        raise
    counter.advance(item, backend.name, used)
    return value


def vote_threshold(m: int, mode: str) -> int:
    """Supporters needed out of m annotators"""
    if mode == "strict_majority":
        return m // 2 + 1
    if mode == "at_least_half":
        return (m + 1) // 2
    raise ValueError(f"unknown vote threshold mode {mode!r}")


def majority_vote(verdicts: Sequence[Verdict]) -> VoteResult:
    if not verdicts:
        raise ValueError("majority vote needs at least one verdict")
    valid = sum(1 for v in verdicts if v.decision == "valid")
    invalid = len(verdicts) - valid
    if 2 * valid > len(verdicts):
        return VoteResult.VALID
    if 2 * invalid > len(verdicts):
        return VoteResult.INVALID
    return VoteResult.TIE


def plurality(ballots: Sequence[RefinementBallot]) -> Optional[str]:
    """The choice with strictly more votes than every other, or None on a tie"""
    tally = Counter(b.choice for b in ballots).most_common()
    if not tally or (len(tally) > 1 and tally[0][1] == tally[1][1]):
        return None
    return tally[0][0]


def _item(record: SentenceRecord, cand: TriggerCandidate, stage: str) -> str:
    return f"{stage}:{record.id}:{cand.start}-{cand.end}:{'|'.join(cand.candidate_types)}"


def filter_request(record: SentenceRecord, cand: TriggerCandidate, cfg: AnnotationConfig) -> PromptRequest:
    annotation = f"`{cand.surface}({', '.join(cand.candidate_types)})`"
    return PromptRequest(user_text=render("filter", sentence=record.text, annotations=annotation),
                         params=cfg.decoding, tag="filter")


async def filter_trigger(record: SentenceRecord, cand: TriggerCandidate, cfg: AnnotationConfig,
                         gateway: Gateway, counter: Optional[AttemptCounter] = None) -> FilterOutcome:
    """Keep or drop one pre-annotated trigger by majority over the annotators, re-asking on ties"""
    counter = counter or AttemptCounter()
    request = filter_request(record, cand, cfg)
    parser = FilterVerdictParser(cand.surface)
    item = _item(record, cand, "filter")
    verdicts: Tuple[Verdict, ...] = ()
    for round_no in range(1, cfg.max_filter_rounds + 1):
        answers = await asyncio.gather(*(
            _ask(gateway.backend(name), request, parser, cfg, counter, item) for name in cfg.annotators))
        verdicts = tuple(sorted(
            (Verdict(annotator=name, decision="valid" if ok else "invalid") for name, ok in zip(cfg.annotators, answers)),
            key=lambda v: v.annotator))
        result = majority_vote(verdicts)
        log_vote(logger, "filter", record.id, cand.surface, round_no,
                 dict(Counter(v.decision for v in verdicts)), result.value)
        if result is not VoteResult.TIE:
            record_vote_rounds("filter", round_no)
            return FilterOutcome(keep=result is VoteResult.VALID, rounds=round_no, verdicts=verdicts)
    log_dropped(logger, "filter_unresolved", record.id, trigger=cand.surface, rounds=cfg.max_filter_rounds)
    return FilterOutcome(keep=False, rounds=cfg.max_filter_rounds, verdicts=verdicts, unresolved=True)


def render_options(types: Sequence[EventTypeDef]) -> str:
    if len(types) > MAX_OPTIONS:
        raise EngineError(f"{len(types)} candidate types exceed the {MAX_OPTIONS} lettered options")
    lines = [f"{chr(ord('A') + i)}. {t.name}: {' '.join(t.description.split())}" for i, t in enumerate(types)]
    lines.append(f"{chr(ord('A') + len(types))}. None of them.")
    return "\n".join(lines)


def refine_request(record: SentenceRecord, cand: TriggerCandidate, ontology: Ontology,
                   cfg: AnnotationConfig) -> PromptRequest:
    options = render_options([ontology.get(type_id) for type_id in cand.candidate_types])
    return PromptRequest(user_text=render("refine", options=options, trigger=cand.surface, sentence=record.text),
                         params=cfg.decoding, tag="refine")


async def refine_event_type(record: SentenceRecord, cand: TriggerCandidate, ontology: Ontology,
                            cfg: AnnotationConfig, gateway: Gateway,
                            counter: Optional[AttemptCounter] = None) -> RefineOutcome:
    """Multiple-choice vote over the candidate types; a plurality winner settles it"""
    counter = counter or AttemptCounter()
    request = refine_request(record, cand, ontology, cfg)
    parser = RefinementChoiceParser(cand.candidate_types)
    item = _item(record, cand, "refine")
    ballots: Tuple[RefinementBallot, ...] = ()
    for round_no in range(1, cfg.max_refinement_rounds + 1):
        choices = await asyncio.gather(*(
            _ask(gateway.backend(name), request, parser, cfg, counter, item) for name in cfg.annotators))
        ballots = tuple(sorted(
            (RefinementBallot(annotator=name, choice=choice) for name, choice in zip(cfg.annotators, choices)),
            key=lambda b: b.annotator))
        winner = plurality(ballots)
        log_vote(logger, "refine", record.id, cand.surface, round_no,
                 dict(sorted(Counter(b.choice for b in ballots).items())), winner or "tie")
        if winner is None:
            continue
        record_vote_rounds("refine", round_no)
        if winner == NONE_OF_THEM:
            log_dropped(logger, "none_of_them", record.id, trigger=cand.surface)
            return RefineOutcome(type_id=None, rounds=round_no, ballots=ballots)
        return RefineOutcome(type_id=winner, rounds=round_no, ballots=ballots)
    log_dropped(logger, "refine_unresolved", record.id, trigger=cand.surface, rounds=cfg.max_refinement_rounds)
    return RefineOutcome(type_id=None, rounds=cfg.max_refinement_rounds, ballots=ballots, unresolved=True)


def _role_list(type_def: EventTypeDef) -> str:
    return ", ".join(type_def.role_names)


def _event_item(record: SentenceRecord, event: EventMention, stage: str) -> str:
    return f"{stage}:{record.id}:{event.trigger.start}-{event.trigger.end}:{event.type_id}"


def dump_role_map(role_map: RoleMap) -> str:
    return json.dumps(role_map, ensure_ascii=False, indent=2)


def arguments_request(record: SentenceRecord, event: EventMention, type_def: EventTypeDef,
                      cfg: AnnotationConfig) -> PromptRequest:
    user_text = render("arguments", event_type=type_def.name, description=type_def.description,
                       trigger=event.trigger.surface, roles=_role_list(type_def), sentence=record.text)
    return PromptRequest(user_text=user_text, params=cfg.decoding, tag="arguments")


def align_request(record: SentenceRecord, event: EventMention, type_def: EventTypeDef, raw: RoleMap,
                  cfg: AnnotationConfig) -> PromptRequest:
    user_text = render("align", event_type=type_def.name, description=type_def.description,
                       trigger=event.trigger.surface, roles=_role_list(type_def), sentence=record.text,
                       input=dump_role_map(raw))
    return PromptRequest(user_text=user_text, params=cfg.decoding, tag="align")


def adjudicate_request(record: SentenceRecord, type_def: EventTypeDef, inputs: Sequence[RoleMap],
                       cfg: AnnotationConfig) -> PromptRequest:
    input1, input2, input3 = (dump_role_map(m) for m in inputs)
    user_text = render("align_multi", roles=_role_list(type_def), sentence=record.text,
                       input1=input1, input2=input2, input3=input3)
    return PromptRequest(user_text=user_text, params=cfg.decoding, tag="adjudicate")


async def annotate_arguments_single(record: SentenceRecord, event: EventMention, type_def: EventTypeDef,
                                    annotator: ChatBackend, cfg: AnnotationConfig,
                                    counter: Optional[AttemptCounter] = None) -> RoleMap:
    """One annotator's role-keyed arguments; unknown roles dropped, missing roles empty"""
    if not type_def.roles:
        return {}
    counter = counter or AttemptCounter()
    parser = RoleMapParser(type_def.role_names, record.id)
    return await _ask(annotator, arguments_request(record, event, type_def, cfg), parser, cfg,
                      counter, _event_item(record, event, "arguments"))


def keep_grounded(record: SentenceRecord, role_map: RoleMap, source: str) -> RoleMap:
    """Drop fillers that do not occur in the sentence"""
    kept: RoleMap = {}
    for role, fillers in role_map.items():
        kept[role] = []
        for filler in fillers:
            if ground_surface(record.text, filler) is None:
                log_dropped(logger, "ungrounded_filler", record.id, role=role, filler=filler, source=source)
            elif filler not in kept[role]:
                kept[role].append(filler)
    return kept


async def align_offsets(record: SentenceRecord, event: EventMention, type_def: EventTypeDef, raw: RoleMap,
                        annotator: ChatBackend, cfg: AnnotationConfig,
                        counter: Optional[AttemptCounter] = None) -> RoleMap:
    """Let the annotator refine its own map, then keep only fillers found in the sentence"""
    if not type_def.roles:
        return {}
    counter = counter or AttemptCounter()
    parser = RoleMapParser(type_def.role_names, record.id)
    refined = await _ask(annotator, align_request(record, event, type_def, raw, cfg), parser, cfg,
                         counter, _event_item(record, event, "align"))
    return keep_grounded(record, refined, annotator.name)


def vote_arguments(aligned: Sequence[RoleMap], mode: str = "strict_majority") -> Tuple[RoleMap, List[DisputeRecord]]:
    """Accept each (role, filler) proposed by at least the threshold of annotators"""
    if not aligned:
        return {}, []
    threshold = vote_threshold(len(aligned), mode)
    roles: List[str] = []
    for role_map in aligned:
        roles.extend(role for role in role_map if role not in roles)
    accepted: RoleMap = {}
    disputes: List[DisputeRecord] = []
    for role in roles:
        proposals = [frozenset(role_map.get(role, [])) for role_map in aligned]
        support = Counter(filler for proposal in proposals for filler in proposal)
        accepted[role] = sorted(filler for filler, count in support.items() if count >= threshold)
        if accepted[role] or not all(proposals):
            continue
        if sum(len(p) for p in proposals) == len(support):
            disputes.append(DisputeRecord(role=role, proposals=tuple(sorted(tuple(sorted(p)) for p in proposals))))
    return accepted, disputes


async def adjudicate_arguments(record: SentenceRecord, event: EventMention, type_def: EventTypeDef,
                               inputs: Sequence[RoleMap], disputes: Sequence[DisputeRecord],
                               adjudicator: ChatBackend, cfg: AnnotationConfig,
                               counter: Optional[AttemptCounter] = None) -> RoleMap:
    """Merge three annotators' raw maps for the disputed roles only"""
    if not disputes:
        raise ValueError("adjudication needs at least one dispute")
    if len(inputs) != 3:
        raise ValueError("adjudication merges exactly three inputs")
    counter = counter or AttemptCounter()
    parser = RoleMapParser(type_def.role_names, record.id)
    merged = await _ask(adjudicator, adjudicate_request(record, type_def, inputs, cfg), parser, cfg,
                        counter, _event_item(record, event, "adjudicate"))
    disputed = {d.role for d in disputes}
    return keep_grounded(record, {role: fillers for role, fillers in merged.items() if role in disputed},
                         adjudicator.name)


class AnnotationPipeline:
    """Filter, refine, annotate, align, vote and adjudicate over one corpus"""

    def __init__(self, ontology: Ontology, gateway: Gateway, cfg: AnnotationConfig):
        if not cfg.annotators:
            raise ConfigError("annotation.annotators is empty")
        self.ontology = ontology
        self.gateway = gateway
        self.cfg = cfg
        self.annotators = [gateway.backend(name) for name in cfg.annotators]
        self.adjudicator = gateway.backend(cfg.adjudicator) if cfg.adjudicator else None

    async def _arguments(self, record: SentenceRecord, event: EventMention,
                         counter: AttemptCounter, report: Dict[str, int]) -> Tuple[ArgumentMention, ...]:
        type_def = self.ontology.get(event.type_id)
        if not type_def.roles:
            return ()

        async def one(annotator: ChatBackend) -> Tuple[str, RoleMap, RoleMap]:
            raw = await annotate_arguments_single(record, event, type_def, annotator, self.cfg, counter)
            aligned = await align_offsets(record, event, type_def, raw, annotator, self.cfg, counter)
            return annotator.name, raw, aligned

        results = sorted(await asyncio.gather(*(one(a) for a in self.annotators)), key=lambda r: r[0])
        accepted, disputes = vote_arguments([aligned for _, _, aligned in results], self.cfg.vote_threshold_mode)
        report["disputes"] += len(disputes)
        if disputes:
            if self.adjudicator is not None and len(results) == 3:
                settled = await adjudicate_arguments(record, event, type_def, [raw for _, raw, _ in results],
                                                     disputes, self.adjudicator, self.cfg, counter)
                accepted.update(settled)
            else:
                for dispute in disputes:
                    log_dropped(logger, "dispute_not_adjudicated", record.id, role=dispute.role)

        mentions = []
        for role in type_def.role_names:
            spans, misses = ground_fillers(record.text, accepted.get(role, []))
            for miss in misses:
                log_dropped(logger, "ungrounded_filler", record.id, role=role, filler=miss)
            if spans:
                mentions.append(ArgumentMention(role=role, fillers=tuple(spans)))
        return tuple(mentions)

    async def annotate_record(self, record: SentenceRecord) -> Tuple[SentenceRecord, AnnotationReport]:
        counter = AttemptCounter()
        counts = Counter({"disputes": 0})

        async def candidate(cand: TriggerCandidate) -> Optional[EventMention]:
            outcome = await filter_trigger(record, cand, self.cfg, self.gateway, counter)
            counts[f"filter_round:{outcome.rounds}"] += 1
            if not outcome.keep:
                counts["unresolved" if outcome.unresolved else "filtered"] += 1
                if not outcome.unresolved:
                    log_dropped(logger, "filtered", record.id, trigger=cand.surface)
                return None
            refined = await refine_event_type(record, cand, self.ontology, self.cfg, self.gateway, counter)
            counts[f"refine_round:{refined.rounds}"] += 1
            if refined.dropped_none:
                counts["dropped_none"] += 1
                return None
            if refined.type_id is None:
                counts["unresolved"] += 1
                return None
            counts["refined"] += 1
            return EventMention(trigger=cand.span, type_id=refined.type_id)

        # identical candidates or refinements share prompts and attempt counters, so settle each once
        candidates = list(dict.fromkeys(record.candidates))
        found = await asyncio.gather(*(candidate(c) for c in candidates))
        mentions = sorted({m for m in found if m is not None},
                          key=lambda m: (m.trigger.start, m.trigger.end, m.type_id))
        arguments = await asyncio.gather(*(self._arguments(record, m, counter, counts) for m in mentions))
        new_events = [EventRecord(trigger=m.trigger, type_id=m.type_id, arguments=args)
                      for m, args in zip(mentions, arguments)]
        annotated = canonicalize_record(record.model_copy(
            update={"events": record.events + tuple(new_events)}))
        report = AnnotationReport(
            records=1,
            candidates=len(record.candidates),
            filtered=counts["filtered"],
            refined=counts["refined"],
            dropped_none=counts["dropped_none"],
            disputes=counts["disputes"],
            unresolved=counts["unresolved"],
            filter_rounds=_histogram(counts, "filter_round:"),
            refinement_rounds=_histogram(counts, "refine_round:"),
        )
        return annotated, report


def _histogram(counts: Counter, prefix: str) -> Dict[int, int]:
    return dict(sorted((int(key[len(prefix):]), n) for key, n in counts.items() if key.startswith(prefix)))


async def run_annotation(corpus: Sequence[SentenceRecord], ontology: Ontology, cfg: AnnotationConfig,
                         gateway: Gateway, parallelism: int = 4
                         ) -> Tuple[List[SentenceRecord], AnnotationReport, List[QuarantineEntry]]:
    """Annotate every record; failing records go to the quarantine list instead of the output"""
    pipeline = AnnotationPipeline(ontology, gateway, cfg)
    async with BatchRunner(parallelism) as runner:
        results, quarantine = await runner.run(corpus, pipeline.annotate_record, stage="annotate")

    report = AnnotationReport(template_digests={name: template_digest(name) for name in ANNOTATION_TEMPLATES})
    records: List[SentenceRecord] = []
    for result in results:
        if result is None:
            continue
        annotated, record_report = result
        records.append(annotated)
        report = report.merge(record_report)
    report = report.model_copy(update={"quarantined": len(quarantine)})
    logger.info("Annotation finished", records=report.records, candidates=report.candidates,
                refined=report.refined, quarantined=report.quarantined)
    return records, report, quarantine

from typing import IO, AbstractSet, Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from app.core.ontology import Ontology
from app.exceptions import CorpusLoadError
from app.models.corpus import ArgumentMention, EventRecord, SentenceRecord, Span
from app.utils.jsonl import read_records, write_records
from app.utils.logging import get_logger

logger = get_logger(__name__)


def ground_surface(text: str, surface: str, excluded: AbstractSet[Tuple[int, int]] = frozenset()) -> Optional[Span]:
    """Leftmost exact occurrence of surface whose (start, end) is not excluded"""
    if not surface:
        raise ValueError("surface must be non-empty")
    start = text.find(surface)
    while start != -1:
        end = start + len(surface)
        if (start, end) not in excluded:
            return Span(start=start, end=end, surface=surface)
        # occurrences may overlap
        start = text.find(surface, start + 1)
    return None


def ground_fillers(text: str, fillers: Iterable[str],
                   excluded: AbstractSet[Tuple[int, int]] = frozenset()) -> Tuple[List[Span], List[str]]:
    """Ground fillers in order, each taking the leftmost span not used yet; returns (spans, misses)"""
    used = set(excluded)
    spans: List[Span] = []
    misses: List[str] = []
    for surface in fillers:
        span = ground_surface(text, surface, used) if surface else None
        if span is None:
            misses.append(surface)
            continue
        used.add(span.key)
        spans.append(span)
    return spans, misses


def _check_spans(record: SentenceRecord, ontology: Optional[Ontology], line: Optional[int]) -> None:
    def check(span: Span, what: str) -> None:
        if span.end > len(record.text):
            raise CorpusLoadError(f"{what} span {span.key} out of bounds", line=line, record_id=record.id)
        if not span.fits(record.text):
            found = record.text[span.start:span.end]
            raise CorpusLoadError(f"{what} surface {span.surface!r} does not match text {found!r}",
                                  line=line, record_id=record.id)

    for cand in record.candidates:
        check(cand.span, "candidate")
        if ontology is not None:
            for type_id in cand.candidate_types:
                if type_id not in ontology:
                    raise CorpusLoadError(f"unknown candidate type {type_id!r}", line=line, record_id=record.id)
    for event in record.events:
        check(event.trigger, "trigger")
        if ontology is not None and event.type_id not in ontology:
            raise CorpusLoadError(f"unknown event type {event.type_id!r}", line=line, record_id=record.id)
        for argument in event.arguments:
            for filler in argument.fillers:
                check(filler, f"filler of {argument.role!r}")


def load_corpus(source: Iterable, ontology: Optional[Ontology] = None) -> List[SentenceRecord]:
    """Read sentence records in file order, verifying every span against its text"""
    records: List[SentenceRecord] = []
    for line_no, payload in read_records(source, CorpusLoadError):
        try:
            record = SentenceRecord.model_validate(payload)
        except ValidationError as exc:
            first = exc.errors()[0]
            location = ".".join(str(part) for part in first["loc"])
            raise CorpusLoadError(f"{location}: {first['msg']}", line=line_no,
                                  record_id=payload.get("id") if isinstance(payload.get("id"), str) else None) from exc
        _check_spans(record, ontology, line_no)
        records.append(record)
    return records


def _span_order(span: Span) -> Tuple[int, int, str]:
    return (span.start, span.end, span.surface)


def _merge_arguments(arguments: Iterable[ArgumentMention]) -> Tuple[ArgumentMention, ...]:
    by_role: Dict[str, Dict[Tuple[int, int], Span]] = {}
    for argument in arguments:
        spans = by_role.setdefault(argument.role, {})
        for filler in argument.fillers:
            spans.setdefault(filler.key, filler)
    return tuple(
        ArgumentMention(role=role, fillers=tuple(sorted(spans.values(), key=_span_order)))
        for role, spans in sorted(by_role.items())
        if spans
    )


def canonicalize_record(record: SentenceRecord) -> SentenceRecord:
    """Sort candidates, events, arguments and fillers; merge duplicate (span, type) events"""
    candidates = tuple(sorted(record.candidates, key=lambda c: (c.start, c.end, c.candidate_types)))
    grouped: Dict[Tuple[int, int, str], List[EventRecord]] = {}
    for event in record.events:
        grouped.setdefault(event.key, []).append(event)
    events = tuple(
        EventRecord(
            trigger=group[0].trigger,
            type_id=key[2],
            arguments=_merge_arguments(arg for event in group for arg in event.arguments),
        )
        for key, group in sorted(grouped.items())
    )
    return record.model_copy(update={"candidates": candidates, "events": events})


def record_to_json(record: SentenceRecord) -> dict:
    return record.model_dump(mode="json", by_alias=True)


def write_corpus(records: Sequence[SentenceRecord], sink: IO[bytes]) -> int:
    """Write canonical records as compact JSON lines; returns the byte count"""
    return write_records((record_to_json(record) for record in records), sink)


def validate_corpus(records: Iterable[SentenceRecord], ontology: Ontology) -> List[str]:
    """List references a corpus makes outside the ontology"""
    violations: List[str] = []
    for record in records:
        for cand in record.candidates:
            for type_id in cand.candidate_types:
                if type_id not in ontology:
                    violations.append(f"unknown candidate type {type_id!r}: {record.id}")
        for event in record.events:
            if event.type_id not in ontology:
                violations.append(f"unknown event type {event.type_id!r}: {record.id}")
                continue
            roles = set(ontology.get(event.type_id).role_names)
            for argument in event.arguments:
                if argument.role not in roles:
                    violations.append(f"role {argument.role!r} outside {event.type_id}: {record.id}")
    return violations

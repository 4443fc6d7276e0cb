import json
from collections import defaultdict
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import pytest

from app.core.corpus import write_corpus
from app.core.ontology import Ontology, load_ontology
from app.core.partition import make_plan
from app.core.recall import recall_topk
from app.llm.gateway import Gateway
from app.llm.script_store import ScriptStore
from app.models.annotation import AnnotationConfig, RoleMap
from app.models.corpus import EventMention, SentenceRecord, Span, TriggerCandidate
from app.models.extraction import ExtractConfig
from app.models.llm import BackendDescriptor, PromptRequest
from app.models.ontology import EventTypeDef
from app.models.retrieval import EmbeddingStore, PartitionPlan
from app.services.annotation import align_request, arguments_request, filter_request, refine_request
from app.services.extraction import render_eae_prompt, render_ed_prompt, whole_ontology
from app.utils.logging import setup_logging

FIXTURES = Path(__file__).parent / "fixtures"

MILOSEVIC = "Five years ago they were negotiating with Milosevic at Dayton to stop the war."
JOHN_AND_SARAH = "John and Sarah attacked the enemy base at night."


@pytest.fixture(scope="session", autouse=True)
def structured_logging():
    setup_logging("DEBUG")


def span_of(text: str, surface: str, occurrence: int = 1) -> Span:
    """Span of the n-th occurrence of surface in text"""
    start = -1
    for _ in range(occurrence):
        start = text.index(surface, start + 1)
    return Span(start=start, end=start + len(surface), surface=surface)


def candidate(text: str, surface: str, *types: str, occurrence: int = 1) -> TriggerCandidate:
    span = span_of(text, surface, occurrence)
    return TriggerCandidate(start=span.start, end=span.end, surface=surface, candidate_types=types)


def filter_answer(*annotations: str) -> str:
    if not annotations:
        return "**Reasonable Annotations**: None of them.\n**Reasoning**: no event."
    listed = ", ".join(f"`{a}`" for a in annotations)
    return f"**Reasonable Annotations**: {listed}\n**Reasoning**: the trigger expresses the event."


def refine_answer(letter: str) -> str:
    return f"**Event Type**: {letter}\n**Reasoning**: the definition fits."


def role_map_answer(role_map: Mapping[str, Sequence[str]]) -> str:
    return "```json\n" + json.dumps(dict(role_map), indent=4) + "\n```"


def full_role_map(type_def: EventTypeDef, role_map: Mapping[str, Sequence[str]]) -> RoleMap:
    """Role map listing every role of the type, as the parser returns it"""
    return {role: list(role_map.get(role, [])) for role in type_def.role_names}


def extraction_plan(record: SentenceRecord, ontology: Ontology, store: Optional[EmbeddingStore],
                    cfg: ExtractConfig) -> PartitionPlan:
    cands = recall_topk(record.id, store, ontology, cfg.k) if cfg.use_recall else whole_ontology(ontology)
    return make_plan(cfg.strategy, cands, min(cfg.partitions, len(cands)), cfg.seed)


class Script:
    """Replay stores per backend name, filled from the exact requests the pipelines render"""

    def __init__(self):
        self.stores: Dict[str, ScriptStore] = defaultdict(ScriptStore)

    def answer(self, backend: str, request: PromptRequest, *responses: str, first_attempt: int = 1) -> None:
        for offset, response in enumerate(responses):
            self.stores[backend].put(request, first_attempt + offset, response)

    def answer_all(self, backends: Sequence[str], request: PromptRequest, *responses: str) -> None:
        for backend in backends:
            self.answer(backend, request, *responses)

    def trigger(self, record: SentenceRecord, cand: TriggerCandidate, ontology: Ontology, letter: str,
                cfg: AnnotationConfig) -> None:
        """Every annotator keeps the trigger and picks the same lettered type"""
        annotation = f"{cand.surface}({', '.join(cand.candidate_types)})"
        self.answer_all(cfg.annotators, filter_request(record, cand, cfg), filter_answer(annotation))
        self.answer_all(cfg.annotators, refine_request(record, cand, ontology, cfg), refine_answer(letter))

    def role_maps(self, record: SentenceRecord, event: EventMention, type_def: EventTypeDef,
                  answers: Mapping[str, Tuple[RoleMap, RoleMap]], cfg: AnnotationConfig) -> None:
        """Each annotator's raw role map and its offset-aligned refinement"""
        for name, (raw, aligned) in answers.items():
            self.answer(name, arguments_request(record, event, type_def, cfg), role_map_answer(raw))
            self.answer(name, align_request(record, event, type_def, full_role_map(type_def, raw), cfg),
                        role_map_answer(aligned))

    def detection(self, record: SentenceRecord, ontology: Ontology, store: Optional[EmbeddingStore],
                  cfg: ExtractConfig, found: Mapping[str, Sequence[str]],
                  overrides: Optional[Mapping[int, Sequence[str]]] = None) -> None:
        """One detection answer per partition of the plan the extractor will compute

        found maps type ids to the triggers reported for them; overrides maps a
        partition index to raw answers replacing the generated one.
        """
        overrides = overrides or {}
        for index, part in enumerate(extraction_plan(record, ontology, store, cfg).parts):
            types = [ontology.get(c.type_id) for c in part]
            request = render_ed_prompt(types, record.text, ontology, cfg.decoding)
            if index in overrides:
                self.answer(cfg.ed_backend, request, *overrides[index])
                continue
            terms = [f'{ontology.identifier(t.id)}(trigger="{trigger}")'
                     for t in types for trigger in found.get(t.id, ())]
            self.answer(cfg.ed_backend, request, f"results = [{', '.join(terms)}]")

    def arguments(self, record: SentenceRecord, ontology: Ontology, cfg: ExtractConfig, type_id: str,
                  trigger: str, answer: str) -> None:
        request = render_eae_prompt(ontology.get(type_id), span_of(record.text, trigger), record.text, ontology,
                                    cfg.decoding)
        self.answer(cfg.eae_backend or cfg.ed_backend, request, answer)

    def gateway(self, *names: str, max_concurrent_requests: int = 4, latency_seconds: float = 0.0) -> Gateway:
        descriptors = [
            BackendDescriptor(name=name, kind="scripted", max_concurrent_requests=max_concurrent_requests,
                              latency_seconds=latency_seconds)
            for name in (names or sorted(self.stores))
        ]
        return Gateway.from_descriptors(descriptors, stores=self.stores)


@pytest.fixture
def ontology() -> Ontology:
    with (FIXTURES / "ontology.jsonl").open("rb") as fh:
        return load_ontology(fh)


@pytest.fixture
def script() -> Script:
    return Script()


@pytest.fixture
def corpus_file(tmp_path):
    """Write records to a JSON-lines file under tmp_path and return its path"""
    def write(name: str, records: Sequence[SentenceRecord]) -> Path:
        path = tmp_path / name
        with path.open("wb") as fh:
            write_corpus(records, fh)
        return path

    return write

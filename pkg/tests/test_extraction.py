import pytest

from app.core.embeddings import synthesize_store
from app.core.ontology import Ontology
from app.exceptions import ConfigError, OutputParseError
from app.models.corpus import ArgumentMention, EventMention, EventRecord, SentenceRecord
from app.models.extraction import ExtractConfig, ParsedEvent
from app.models.ontology import EventTypeDef
from app.prompts import template_digest
from app.services.extraction import (ExtractionPipeline, parse_eae_output, parse_ed_output, render_eae_prompt,
                                     render_ed_prompt, render_schema_block, run_extraction, whole_ontology)
from tests.conftest import JOHN_AND_SARAH, MILOSEVIC, extraction_plan, span_of

CFG = ExtractConfig(ed_backend="ed", eae_backend="eae")

PARLEY_BLOCK = (
    "class Parley(Event):\n"
    '    """type of diplomatic meeting held between enemies"""\n'
    "    negotiator: List[str]  # Negotiator\n"
    "    other_party: List[str]  # Other party\n"
    "    location: List[str]  # Location"
)


def _record(text: str, record_id: str = "s1") -> SentenceRecord:
    return SentenceRecord(id=record_id, text=text)


def test_schema_block_is_pinned(ontology):
    """Test the exact declaration rendered for one type"""
    assert render_schema_block([ontology.get("parley")], ontology) == PARLEY_BLOCK


def test_schema_block_without_roles(ontology):
    """Test a role-less type keeps its docstring and an empty type gets `pass`"""
    assert render_schema_block([ontology.get("volunteering")], ontology) == (
        "class Volunteering(Event):\n"
        '    """giving time or work without being paid"""'
    )
    blank = Ontology([EventTypeDef(id="x", name="blank")])
    assert render_schema_block([blank.get("x")], blank) == "class Blank(Event):\n    pass"


def test_schema_block_keeps_order(ontology):
    """Test declarations follow the given type order"""
    block = render_schema_block([ontology.get("war"), ontology.get("parley")], ontology)
    assert block.index("class War(Event)") < block.index("class Parley(Event)")
    assert "\n\n" in block


def test_ed_prompt(ontology):
    """Test the detection prompt carries the schema block, the sentence and the decoding settings"""
    request = render_ed_prompt([ontology.get("parley")], MILOSEVIC, ontology, CFG.decoding)

    assert PARLEY_BLOCK in request.user_text
    assert f'sentence = "{MILOSEVIC}"' in request.user_text
    assert "class Meeting" not in request.user_text
    assert request.tag == "ed"
    assert request.params.max_output_tokens == 500
    assert request.params.effective_temperature == 0.0


def test_ed_prompt_rejects_empty_part(ontology):
    """Test a prompt needs at least one type"""
    with pytest.raises(ValueError):
        render_ed_prompt([], MILOSEVIC, ontology)


def test_eae_prompt(ontology):
    """Test the argument prompt names the trigger and the answer format"""
    request = render_eae_prompt(ontology.get("parley"), span_of(MILOSEVIC, "negotiating"), MILOSEVIC, ontology)

    assert PARLEY_BLOCK in request.user_text
    assert 'Parley(trigger="negotiating", negotiator=["..."], other_party=["..."], location=["..."])' \
        in request.user_text
    assert 'trigger = "negotiating"' in request.user_text
    assert request.tag == "eae"


def test_parse_ed_output(ontology):
    """Test in-partition instantiations are kept and the rest dropped"""
    part = [ontology.get("parley"), ontology.get("negotiation")]
    text = 'results = [Parley(trigger="negotiating"), War(trigger="war"), Summit(trigger="talks"), ' \
           'Parley(trigger="negotiating")]'

    parsed = parse_ed_output(text, part, ontology, "s1")

    assert parsed.events == [ParsedEvent(identifier="Parley", type_id="parley", trigger="negotiating")]
    assert parsed.out_of_partition == ["War", "Summit"]


@pytest.mark.parametrize("text", [
    "results = []",
    "```python\nresults = []\n```",
    "[]",
])
def test_parse_ed_output_empty(ontology, text):
    """Test the accepted spellings of no events"""
    assert parse_ed_output(text, [ontology.get("war")], ontology).events == []


@pytest.mark.parametrize("text", [
    "There is a war.",
    'results = War(trigger="war")',
    'results = [War("war")]',
    "results = [War(trigger=1)]",
    'results = [War(trigger=trigger)]',
    "x = 1\ny = 2",
])
def test_parse_ed_output_rejects(ontology, text):
    """Test malformed detection answers raise a parse error"""
    with pytest.raises(OutputParseError):
        parse_ed_output(text, [ontology.get("war")], ontology)


def test_parse_eae_output(ontology):
    """Test fields map back to role names, absent roles empty"""
    text = 'Parley(trigger="negotiating", negotiator=["they"], other_party=["Milosevic"])'
    assert parse_eae_output(text, ontology.get("parley"), ontology) == {
        "Negotiator": ["they"],
        "Other party": ["Milosevic"],
        "Location": [],
    }


def test_parse_eae_output_tolerates_list_and_unknown_fields(ontology):
    """Test a single-element list is unwrapped, repeats kept and invented fields ignored"""
    text = 'results = [War(trigger="war", participant=["NATO", "NATO"], weapon=["jets"])]'
    assert parse_eae_output(text, ontology.get("war"), ontology) == {"Participant": ["NATO", "NATO"], "Location": []}


@pytest.mark.parametrize("text", [
    'Parley(trigger="negotiating", negotiator=["they"])',
    'War(trigger="war", participant="x", location=[1])',
    'War(trigger="war"), War(trigger="war")',
])
def test_parse_eae_output_rejects(ontology, text):
    """Test a wrong class or malformed fillers raise a parse error"""
    with pytest.raises(OutputParseError):
        parse_eae_output(text, ontology.get("war"), ontology)


def test_extract_config_checks():
    """Test N above k and a seedless random strategy are rejected"""
    with pytest.raises(ValueError):
        ExtractConfig(partitions=20)
    with pytest.raises(ValueError):
        ExtractConfig(strategy="random")
    assert ExtractConfig(strategy="random", seed=3).seed == 3


def test_pipeline_requires_backends_and_store(ontology, script):
    """Test missing detection backend or embeddings fail before any request"""
    gateway = script.gateway("ed", "eae")
    with pytest.raises(ConfigError):
        ExtractionPipeline(ontology, None, ExtractConfig(use_recall=False), gateway)
    with pytest.raises(ConfigError):
        ExtractionPipeline(ontology, None, CFG, gateway)


def test_whole_ontology(ontology):
    """Test disabled recall offers every type at full confidence"""
    cands = whole_ontology(ontology)
    assert [c.type_id for c in cands] == ontology.ids
    assert {c.confidence for c in cands} == {1.0}


async def test_detect_events(ontology, script):
    """Test mentions from both partitions are grounded, merged and sorted"""
    record = _record(MILOSEVIC)
    store = synthesize_store(ontology, [record])
    script.detection(record, ontology, store, CFG,
                     {"parley": ["negotiating"], "negotiation": ["negotiating"], "war": ["war"]})
    pipeline = ExtractionPipeline(ontology, store, CFG, script.gateway("ed", "eae"))

    mentions = await pipeline.detect_events(record)

    assert mentions == [
        EventMention(trigger=span_of(MILOSEVIC, "negotiating"), type_id="negotiation"),
        EventMention(trigger=span_of(MILOSEVIC, "negotiating"), type_id="parley"),
        EventMention(trigger=span_of(MILOSEVIC, "war"), type_id="war"),
    ]


async def test_detect_events_drops_ungrounded_and_out_of_partition(ontology, script):
    """Test triggers absent from the sentence and foreign classes are counted and dropped"""
    record = _record(MILOSEVIC)
    cfg = CFG.model_copy(update={"use_recall": False})
    plan = extraction_plan(record, ontology, None, cfg)
    outsider = ontology.identifier(plan.parts[1][0].type_id)
    first = ontology.identifier(plan.parts[0][0].type_id)
    script.detection(record, ontology, None, cfg, {}, overrides={
        0: [f'results = [{first}(trigger="battle"), {outsider}(trigger="war")]'],
    })
    pipeline = ExtractionPipeline(ontology, None, cfg, script.gateway("ed", "eae"))
    report = {"parse_retries": 0, "dropped_ungrounded": 0, "dropped_out_of_partition": 0, "failed_partitions": 0}

    assert await pipeline.detect_events(record, report) == []
    assert report == {"parse_retries": 0, "dropped_ungrounded": 1, "dropped_out_of_partition": 1,
                      "failed_partitions": 0}


async def test_detect_events_failed_partition(ontology, script):
    """Test a partition that never parses contributes nothing while the other still counts"""
    record = _record(MILOSEVIC)
    cfg = CFG.model_copy(update={"use_recall": False})
    failing = 0 if "war" not in [c.type_id for c in extraction_plan(record, ontology, None, cfg).parts[0]] else 1
    script.detection(record, ontology, None, cfg, {"war": ["war"]},
                     overrides={failing: ["no idea", "still no idea", "I give up"]})
    pipeline = ExtractionPipeline(ontology, None, cfg, script.gateway("ed", "eae"))
    report = {"parse_retries": 0, "dropped_ungrounded": 0, "dropped_out_of_partition": 0, "failed_partitions": 0}

    mentions = await pipeline.detect_events(record, report)

    assert mentions == [EventMention(trigger=span_of(MILOSEVIC, "war"), type_id="war")]
    assert report["failed_partitions"] == 1
    assert report["parse_retries"] == 2


async def test_extract_arguments(ontology, script):
    """Test fillers are grounded per role and ungrounded ones dropped"""
    record = _record(JOHN_AND_SARAH)
    cfg = CFG.model_copy(update={"use_recall": False})
    script.arguments(record, ontology, cfg, "attack", "attacked",
                     'Attack(trigger="attacked", agent=["John", "Sarah"], target=["enemy base"], '
                     'time=["night"], location=["the bunker"])')
    pipeline = ExtractionPipeline(ontology, None, cfg, script.gateway("ed", "eae"))
    report = {"parse_retries": 0, "dropped_ungrounded": 0, "dropped_out_of_partition": 0, "failed_partitions": 0}

    arguments = await pipeline.extract_arguments(
        record, EventMention(trigger=span_of(JOHN_AND_SARAH, "attacked"), type_id="attack"), report)

    assert arguments == [
        ArgumentMention(role="Agent", fillers=(span_of(JOHN_AND_SARAH, "John"), span_of(JOHN_AND_SARAH, "Sarah"))),
        ArgumentMention(role="Target", fillers=(span_of(JOHN_AND_SARAH, "enemy base"),)),
        ArgumentMention(role="Time", fillers=(span_of(JOHN_AND_SARAH, "night"),)),
    ]
    assert report["dropped_ungrounded"] == 1


async def test_extract_arguments_repeated_filler(ontology, script):
    """Test a filler listed twice takes two occurrences and a third listing is dropped"""
    text = "John attacked John at night."
    record = _record(text)
    cfg = CFG.model_copy(update={"use_recall": False})
    script.arguments(record, ontology, cfg, "attack", "attacked",
                     'Attack(trigger="attacked", agent=["John", "John", "John"], target=[], time=[], location=[])')
    pipeline = ExtractionPipeline(ontology, None, cfg, script.gateway("ed", "eae"))
    report = {"parse_retries": 0, "dropped_ungrounded": 0, "dropped_out_of_partition": 0, "failed_partitions": 0}

    arguments = await pipeline.extract_arguments(
        record, EventMention(trigger=span_of(text, "attacked"), type_id="attack"), report)

    assert arguments == [ArgumentMention(role="Agent", fillers=(span_of(text, "John"), span_of(text, "John", 2)))]
    assert [f.key for f in arguments[0].fillers] == [(0, 4), (14, 18)]
    assert report["dropped_ungrounded"] == 1


async def test_extract_arguments_role_less_type(ontology, script):
    """Test a type without roles never reaches the backend"""
    text = "She spent the summer volunteering."
    cfg = CFG.model_copy(update={"use_recall": False})
    gateway = script.gateway("ed", "eae")
    pipeline = ExtractionPipeline(ontology, None, cfg, gateway)

    mention = EventMention(trigger=span_of(text, "volunteering"), type_id="volunteering")
    assert await pipeline.extract_arguments(_record(text), mention) == []
    assert gateway.backend("eae").calls == 0


async def test_extract_arguments_unparseable(ontology, script):
    """Test an argument answer that never parses leaves the event without arguments"""
    record = _record(JOHN_AND_SARAH)
    cfg = CFG.model_copy(update={"use_recall": False, "max_parse_attempts": 2})
    request = render_eae_prompt(ontology.get("attack"), span_of(JOHN_AND_SARAH, "attacked"), JOHN_AND_SARAH,
                                ontology, cfg.decoding)
    script.answer("eae", request, "John and Sarah did it.", "Agent: John")
    pipeline = ExtractionPipeline(ontology, None, cfg, script.gateway("ed", "eae"))

    mention = EventMention(trigger=span_of(JOHN_AND_SARAH, "attacked"), type_id="attack")
    assert await pipeline.extract_arguments(record, mention) == []


async def test_run_extraction(ontology, script):
    """Test detection plus argument extraction over a small corpus with one failing record"""
    records = [_record(MILOSEVIC, "s1"), _record(JOHN_AND_SARAH, "s2"), _record("Nothing happened here.", "s3")]
    store = synthesize_store(ontology, records)
    script.detection(records[0], ontology, store, CFG, {"parley": ["negotiating"], "war": ["war"]})
    script.arguments(records[0], ontology, CFG, "parley", "negotiating",
                     'Parley(trigger="negotiating", negotiator=["they"], other_party=["Milosevic"], '
                     'location=["Dayton"])')
    script.arguments(records[0], ontology, CFG, "war", "war", 'War(trigger="war", participant=[], location=[])')
    script.detection(records[1], ontology, store, CFG, {})

    predictions, report, quarantine = await run_extraction(records, ontology, store, CFG,
                                                           script.gateway("ed", "eae"), parallelism=2)

    assert predictions == [
        SentenceRecord(id="s1", text=MILOSEVIC, events=(
            EventRecord(trigger=span_of(MILOSEVIC, "negotiating"), type_id="parley", arguments=(
                ArgumentMention(role="Location", fillers=(span_of(MILOSEVIC, "Dayton"),)),
                ArgumentMention(role="Negotiator", fillers=(span_of(MILOSEVIC, "they"),)),
                ArgumentMention(role="Other party", fillers=(span_of(MILOSEVIC, "Milosevic"),)),
            )),
            EventRecord(trigger=span_of(MILOSEVIC, "war"), type_id="war"),
        )),
        SentenceRecord(id="s2", text=JOHN_AND_SARAH),
    ]
    assert [entry.record_id for entry in quarantine] == ["s3"]
    assert quarantine[0].error_type == "MissingScriptError"
    assert (report.sentences, report.events, report.arguments, report.quarantined) == (2, 2, 3, 1)
    assert report.template_digests == {"ed": template_digest("ed"), "eae": template_digest("eae")}

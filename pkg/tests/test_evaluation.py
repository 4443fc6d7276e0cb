import json

import pytest

from app.exceptions import CorpusMismatchError, EvaluationError
from app.models.corpus import ArgumentMention, EventRecord, SentenceRecord, Span
from app.models.evaluation import MatchMode
from app.services.evaluation import dump_report, evaluate, match_counts, prf

TEXT = "abcd xxxxx yyyyy zzzzz fillerword"


def _span(start, end):
    return Span(start=start, end=end, surface=TEXT[start:end])


def _event(start, end, type_id, *arguments):
    return EventRecord(trigger=_span(start, end), type_id=type_id, arguments=tuple(
        ArgumentMention(role=role, fillers=(_span(fs, fe),)) for role, fs, fe in arguments))


def _record(*events, record_id="s1"):
    return SentenceRecord(id=record_id, text=TEXT, events=events)


GOLD = [_record(_event(0, 4, "A"), _event(5, 10, "B"))]
PRED = [_record(_event(0, 4, "A"), _event(5, 10, "C"), _event(11, 16, "A"))]


def test_trigger_counts():
    """Test identification ignores the type and classification needs it"""
    assert match_counts(PRED, GOLD, MatchMode.TI) == (2, 3, 2)
    assert match_counts(PRED, GOLD, MatchMode.TC) == (1, 3, 2)


def test_trigger_scores():
    """Test micro P/R/F1 of the worked trigger example"""
    report = evaluate(PRED, GOLD)

    assert (report.TI.precision, report.TI.recall, report.TI.f1) == pytest.approx((2 / 3, 1.0, 0.8))
    assert (report.TC.precision, report.TC.recall, report.TC.f1) == pytest.approx((1 / 3, 0.5, 0.4))


@pytest.mark.parametrize("counts,expected", [
    ((0, 0, 0), (1.0, 1.0, 1.0)),
    ((0, 0, 3), (0.0, 0.0, 0.0)),
    ((0, 4, 0), (0.0, 0.0, 0.0)),
    ((2, 4, 2), (0.5, 1.0, 2 / 3)),
    ((3, 3, 3), (1.0, 1.0, 1.0)),
])
def test_prf(counts, expected):
    """Test the zero-denominator conventions"""
    score = prf(*counts)
    assert (score.precision, score.recall, score.f1) == pytest.approx(expected)


def test_prf_rejects_impossible_counts():
    """Test true positives above a total are refused"""
    with pytest.raises(EvaluationError):
        prf(3, 2, 5)


def test_no_predictions():
    """Test an empty prediction scores zero recall"""
    report = evaluate([_record()], GOLD)
    assert report.TI.recall == 0.0
    assert report.TI.f1 == 0.0


def test_identical_corpora_score_one():
    """Test gold against itself is perfect in every mode"""
    gold = [_record(_event(0, 4, "A", ("Agent", 23, 33)), _event(5, 10, "B", ("Place", 17, 22)))]
    report = evaluate(gold, gold)
    assert {mode.value: report.get(mode).f1 for mode in MatchMode} == {"TI": 1.0, "TC": 1.0, "AI": 1.0, "AC": 1.0}


def test_argument_role_matters_only_for_classification():
    """Test a filler under the wrong role counts for AI but not AC"""
    gold = [_record(_event(0, 4, "A", ("Agent", 23, 33)))]
    pred = [_record(_event(0, 4, "A", ("Victim", 23, 33)))]

    report = evaluate(pred, gold)

    assert report.AI.f1 == 1.0
    assert report.AC.f1 == 0.0


def test_argument_anchor():
    """Test the trigger anchor separates fillers shared by two mentions of one type"""
    gold = [_record(_event(0, 4, "A", ("Agent", 23, 33)))]
    pred = [_record(_event(11, 16, "A", ("Agent", 23, 33)))]

    assert evaluate(pred, gold, anchor="type").AC.f1 == 1.0
    assert evaluate(pred, gold, anchor="trigger").AC.f1 == 0.0
    with pytest.raises(EvaluationError):
        evaluate(pred, gold, anchor="sentence")


def test_duplicate_keys_collapse():
    """Test repeated events do not count twice"""
    pred = [_record(_event(0, 4, "A"), _event(0, 4, "A"))]
    assert match_counts(pred, GOLD, MatchMode.TC) == (1, 1, 2)


def test_mismatched_text():
    """Test the same id with different text is refused"""
    other = [SentenceRecord(id="s1", text="different text")]
    with pytest.raises(CorpusMismatchError):
        evaluate(other, GOLD)


def test_sentence_diagnostics():
    """Test per-sentence gold/pred/tp counts cover both corpora"""
    pred = PRED + [_record(_event(0, 4, "A"), record_id="s2")]

    report = evaluate(pred, GOLD)

    assert [s.sentence_id for s in report.sentences] == ["s1", "s2"]
    assert report.sentences[0].counts["TC"] == [2, 3, 1]
    assert report.sentences[1].counts["TI"] == [0, 1, 0]


def test_dump_report_is_stable():
    """Test the JSON report is sorted and reproducible"""
    text = dump_report(evaluate(PRED, GOLD))

    assert text == dump_report(evaluate(PRED, GOLD))
    payload = json.loads(text)
    assert list(payload) == sorted(payload)
    assert payload["TI"]["tp"] == 2
    assert payload["conventions"]["averaging"] == "micro"

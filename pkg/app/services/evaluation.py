import json
from typing import Dict, Iterable, List, Sequence, Set, Tuple

from app.exceptions import CorpusMismatchError, EvaluationError
from app.models.corpus import SentenceRecord
from app.models.evaluation import PRF, EvalReport, MatchMode, SentenceDiagnostics
from app.utils.logging import get_logger

logger = get_logger(__name__)

Key = Tuple


def _index(records: Iterable[SentenceRecord]) -> Dict[str, List[SentenceRecord]]:
    index: Dict[str, List[SentenceRecord]] = {}
    for record in records:
        index.setdefault(record.id, []).append(record)
    return index


def _check_texts(pred: Dict[str, List[SentenceRecord]], gold: Dict[str, List[SentenceRecord]]) -> None:
    for sentence_id in pred.keys() & gold.keys():
        texts = {r.text for r in pred[sentence_id]} | {r.text for r in gold[sentence_id]}
        if len(texts) > 1:
            raise CorpusMismatchError(f"sentence {sentence_id!r} has different text in prediction and gold")


def record_keys(record: SentenceRecord, mode: MatchMode, anchor: str = "type") -> Set[Key]:
    """Match keys of one record; duplicates collapse"""
    keys: Set[Key] = set()
    for event in record.events:
        trigger = (event.trigger.start, event.trigger.end)
        if mode is MatchMode.TI:
            keys.add((record.id,) + trigger)
        elif mode is MatchMode.TC:
            keys.add((record.id,) + trigger + (event.type_id,))
        else:
            head = (record.id, event.type_id) + (trigger if anchor == "trigger" else ())
            for argument in event.arguments:
                for filler in argument.fillers:
                    key = head + (filler.start, filler.end)
                    keys.add(key + (argument.role,) if mode is MatchMode.AC else key)
    return keys


def corpus_keys(records: Iterable[SentenceRecord], mode: MatchMode, anchor: str = "type") -> Set[Key]:
    keys: Set[Key] = set()
    for record in records:
        keys |= record_keys(record, mode, anchor)
    return keys


def match_counts(pred: Sequence[SentenceRecord], gold: Sequence[SentenceRecord], mode: MatchMode,
                 anchor: str = "type") -> Tuple[int, int, int]:
    """(tp, pred_total, gold_total) over exact-offset key sets"""
    _check_texts(_index(pred), _index(gold))
    pred_keys, gold_keys = corpus_keys(pred, mode, anchor), corpus_keys(gold, mode, anchor)
    return len(pred_keys & gold_keys), len(pred_keys), len(gold_keys)


def prf(tp: int, pred_total: int, gold_total: int) -> PRF:
    if tp < 0 or tp > pred_total or tp > gold_total:
        raise EvaluationError(f"true positives {tp} exceed totals ({pred_total}, {gold_total})")
    if pred_total == 0 and gold_total == 0:
        return PRF(precision=1.0, recall=1.0, f1=1.0, tp=0, pred_total=0, gold_total=0)
    precision = tp / pred_total if pred_total else 0.0
    recall = tp / gold_total if gold_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision=precision, recall=recall, f1=f1, tp=tp, pred_total=pred_total, gold_total=gold_total)


def _check_monotone(correct: Dict[MatchMode, Set[Key]]) -> None:
    # a classified match is always an identified match
    if {key[:3] for key in correct[MatchMode.TC]} - correct[MatchMode.TI]:
        raise EvaluationError("TC matches outside TI matches")
    if {key[:-1] for key in correct[MatchMode.AC]} - correct[MatchMode.AI]:
        raise EvaluationError("AC matches outside AI matches")


def evaluate(pred: Sequence[SentenceRecord], gold: Sequence[SentenceRecord], anchor: str = "type") -> EvalReport:
    """Micro P/R/F1 for TI, TC, AI and AC plus per-sentence counts"""
    if anchor not in ("type", "trigger"):
        raise EvaluationError(f"unknown argument anchor {anchor!r}")
    pred_index, gold_index = _index(pred), _index(gold)
    _check_texts(pred_index, gold_index)

    scores: Dict[str, PRF] = {}
    correct: Dict[MatchMode, Set[Key]] = {}
    for mode in MatchMode:
        pred_keys, gold_keys = corpus_keys(pred, mode, anchor), corpus_keys(gold, mode, anchor)
        correct[mode] = pred_keys & gold_keys
        scores[mode.value] = prf(len(correct[mode]), len(pred_keys), len(gold_keys))
    _check_monotone(correct)

    sentences = []
    for sentence_id in sorted(pred_index.keys() | gold_index.keys()):
        counts = {}
        for mode in MatchMode:
            p = corpus_keys(pred_index.get(sentence_id, []), mode, anchor)
            g = corpus_keys(gold_index.get(sentence_id, []), mode, anchor)
            counts[mode.value] = [len(g), len(p), len(p & g)]
        sentences.append(SentenceDiagnostics(sentence_id=sentence_id, counts=counts))

    report = EvalReport(
        conventions={
            "averaging": "micro",
            "span_matching": "exact character offsets",
            "argument_anchor": anchor,
            "empty_slice": "no predictions and no gold scores 1.0",
            "sentence_counts": "gold, pred, tp",
        },
        sentences=sentences,
        **scores,
    )
    logger.info("Evaluation finished", **{mode.value: round(report.get(mode).f1, 4) for mode in MatchMode})
    return report


def dump_report(report) -> str:
    """Sorted, indented JSON for any pydantic report"""
    return json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

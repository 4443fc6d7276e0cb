from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from app.core.ontology import Ontology
from app.exceptions import DegenerateGradientPointError, EmbeddingStoreError
from app.models.retrieval import EmbeddingStore, RecallCandidate, TokenEmbeddings, TrainingPair
from app.utils.logging import get_logger

logger = get_logger(__name__)

Matrix = Union[TokenEmbeddings, np.ndarray]


def _rows(value: Matrix) -> np.ndarray:
    return value.rows if isinstance(value, TokenEmbeddings) else np.asarray(value, dtype=np.float64)


def latesim_score(sentence: Matrix, event: Matrix) -> float:
    """Sum over sentence rows of the best dot product with any event row"""
    s, e = _rows(sentence), _rows(event)
    if s.shape[1] != e.shape[1]:
        raise ValueError(f"dimension mismatch: {s.shape[1]} vs {e.shape[1]}")
    # accumulate each dot product in coordinate order so results are reproducible bit for bit
    sims = np.zeros((s.shape[0], e.shape[0]), dtype=np.float64)
    for j in range(s.shape[1]):
        sims += s[:, j, None] * e[None, :, j]
    total = 0.0
    for best in sims.max(axis=1):
        total += float(best)
    return total


def _sentence(store: EmbeddingStore, sentence_id: str) -> TokenEmbeddings:
    try:
        return store.sentences[sentence_id]
    except KeyError:
        raise EmbeddingStoreError(f"missing sentence embedding {sentence_id!r}") from None


def _type(store: EmbeddingStore, type_id: str) -> TokenEmbeddings:
    try:
        return store.types[type_id]
    except KeyError:
        raise EmbeddingStoreError(f"missing type embedding {type_id!r}") from None


def normalize_confidences(candidates: Sequence[RecallCandidate]) -> List[RecallCandidate]:
    """Min-max scale raw scores into [0, 1]; all 1.0 when every score is equal"""
    if not candidates:
        return []
    scores = [c.raw_score for c in candidates]
    low, high = min(scores), max(scores)
    if high == low:
        return [c.model_copy(update={"confidence": 1.0}) for c in candidates]
    return [
        c.model_copy(update={"confidence": min(1.0, (c.raw_score - low) / (high - low))})
        for c in candidates
    ]


def rank_types(sentence_id: str, store: EmbeddingStore, ontology: Ontology) -> List[RecallCandidate]:
    """Every ontology type scored against the sentence, best first, ties by ascending id"""
    sentence = _sentence(store, sentence_id)
    scored = [
        RecallCandidate(type_id=type_id, raw_score=latesim_score(sentence, _type(store, type_id)))
        for type_id in ontology.ids
    ]
    return sorted(scored, key=lambda c: (-c.raw_score, c.type_id))


def recall_topk(sentence_id: str, store: EmbeddingStore, ontology: Ontology, k: int) -> List[RecallCandidate]:
    if k < 1:
        raise ValueError("k must be at least 1")
    top = rank_types(sentence_id, store, ontology)[:k]
    logger.debug("Recalled types", sentence_id=sentence_id, k=k, returned=len(top))
    return normalize_confidences(top)


def margin_loss(pairs: Sequence[TrainingPair], store: EmbeddingStore, margin: float) -> float:
    """Mean over pairs of the summed hinge margin - best positive score + negative score"""
    if not pairs:
        raise ValueError("margin loss needs at least one training pair")
    total = 0.0
    for pair in pairs:
        sentence = _sentence(store, pair.sentence_id)
        best = max(latesim_score(sentence, _type(store, t)) for t in pair.positives)
        for negative in pair.negatives:
            total += max(0.0, margin - best + latesim_score(sentence, _type(store, negative)))
    return total / len(pairs)


ParamKey = Tuple[str, str]


class MarginRankingObjective(nn.Module):
    """Differentiable margin loss over a fixed set of sentence and type embeddings"""

    def __init__(self, pairs: Sequence[TrainingPair], store: EmbeddingStore, margin: float):
        super(MarginRankingObjective, self).__init__()
        self.pairs = list(pairs)
        self.margin = margin
        self.keys: List[ParamKey] = []
        self.embeddings = nn.ParameterList()
        self._index: Dict[ParamKey, int] = {}
        for pair in self.pairs:
            self._register(("sentence", pair.sentence_id), _sentence(store, pair.sentence_id))
            for type_id in pair.positives + pair.negatives:
                self._register(("type", type_id), _type(store, type_id))

    def _register(self, key: ParamKey, value: TokenEmbeddings) -> None:
        if key in self._index:
            return
        self._index[key] = len(self.keys)
        self.keys.append(key)
        self.embeddings.append(nn.Parameter(torch.tensor(value.rows, dtype=torch.float64)))

    def param(self, kind: str, owner: str) -> torch.Tensor:
        return self.embeddings[self._index[(kind, owner)]]

    def score(self, sentence_id: str, type_id: str) -> torch.Tensor:
        sims = self.param("sentence", sentence_id) @ self.param("type", type_id).T
        return sims.max(dim=1).values.sum()

    def forward(self) -> torch.Tensor:
        total = torch.zeros((), dtype=torch.float64)
        for pair in self.pairs:
            best = torch.stack([self.score(pair.sentence_id, t) for t in pair.positives]).max()
            for negative in pair.negatives:
                total = total + torch.clamp(self.margin - best + self.score(pair.sentence_id, negative), min=0.0)
        return total / len(self.pairs)


def _second_gap(values: np.ndarray) -> float:
    if values.size < 2:
        return float("inf")
    top = np.sort(values)[::-1]
    return float(top[0] - top[1])


def _check_non_degenerate(pairs: Sequence[TrainingPair], store: EmbeddingStore,
                          margin: float, tolerance: float) -> None:
    for pair in pairs:
        s = _sentence(store, pair.sentence_id).rows
        for type_id in pair.positives + pair.negatives:
            sims = s @ _type(store, type_id).rows.T
            if any(_second_gap(row) < tolerance for row in sims):
                raise DegenerateGradientPointError(
                    f"max tie between rows of {type_id!r} for {pair.sentence_id!r}; re-seed the instance")
        positives = np.array([latesim_score(s, _type(store, t).rows) for t in pair.positives])
        if _second_gap(positives) < tolerance:
            raise DegenerateGradientPointError(
                f"tie between best positives for {pair.sentence_id!r}; re-seed the instance")
        best = float(positives.max())
        for negative in pair.negatives:
            hinge = margin - best + latesim_score(s, _type(store, negative).rows)
            if abs(hinge) < tolerance:
                raise DegenerateGradientPointError(
                    f"hinge kink at {negative!r} for {pair.sentence_id!r}; re-seed the instance")


def _replace(store: EmbeddingStore, key: ParamKey, rows: np.ndarray) -> EmbeddingStore:
    kind, owner = key
    value = TokenEmbeddings(owner=owner, rows=rows)
    if kind == "sentence":
        return EmbeddingStore(store.dimension, {**store.sentences, owner: value}, store.types)
    return EmbeddingStore(store.dimension, store.sentences, {**store.types, owner: value})


def margin_loss_grad_check(pairs: Sequence[TrainingPair], store: EmbeddingStore,
                           margin: float, eps: float = 1e-6) -> float:
    """Largest relative gap between the autograd subgradient and central differences

    Each entry compares |analytic - numeric| to max(|analytic|, |numeric|, 1), so
    entries smaller than 1 in magnitude are held to an absolute tolerance.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not pairs:
        raise ValueError("margin loss needs at least one training pair")
    _check_non_degenerate(pairs, store, margin, tolerance=max(1e-4, 100 * eps))

    objective = MarginRankingObjective(pairs, store, margin)
    objective.zero_grad()
    objective().backward()

    deviation = 0.0
    for key, param in zip(objective.keys, objective.embeddings):
        analytic = param.grad.detach().numpy() if param.grad is not None else np.zeros(tuple(param.shape))
        base = np.array(param.detach().numpy(), dtype=np.float64)
        for index in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[index] += eps
            minus[index] -= eps
            numeric = (margin_loss(pairs, _replace(store, key, plus), margin)
                       - margin_loss(pairs, _replace(store, key, minus), margin)) / (2 * eps)
            a = float(analytic[index])
            deviation = max(deviation, abs(a - numeric) / max(abs(a), abs(numeric), 1.0))
    logger.debug("Gradient check", pairs=len(pairs), parameters=len(objective.keys), deviation=deviation)
    return deviation

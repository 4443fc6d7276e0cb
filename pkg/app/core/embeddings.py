import hashlib
import re
from typing import IO, Any, Dict, Iterable, Optional, Sequence

import numpy as np

from app.core.ontology import Ontology
from app.exceptions import EmbeddingStoreError
from app.models.corpus import SentenceRecord
from app.models.retrieval import EmbeddingStore, TokenEmbeddings
from app.utils.jsonl import read_records, write_records
from app.utils.logging import get_logger

logger = get_logger(__name__)

_TOKEN = re.compile(r"\w+")


def make_embeddings(owner: str, rows: Any, dimension: Optional[int] = None) -> TokenEmbeddings:
    """Validate rows (>=1, equal width, finite) and wrap them as float64 embeddings"""
    try:
        matrix = np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise EmbeddingStoreError(f"{owner!r}: rows are not a numeric matrix") from exc
    if matrix.ndim != 2 or matrix.shape[0] == 0 or matrix.shape[1] == 0:
        raise EmbeddingStoreError(f"{owner!r}: expected a non-empty n x d matrix, got shape {matrix.shape}")
    if dimension is not None and matrix.shape[1] != dimension:
        raise EmbeddingStoreError(f"{owner!r}: dimension {matrix.shape[1]} differs from store dimension {dimension}")
    if not np.all(np.isfinite(matrix)):
        raise EmbeddingStoreError(f"{owner!r}: non-finite entries")
    matrix.setflags(write=False)
    return TokenEmbeddings(owner=owner, rows=matrix)


def load_embedding_store(source: Iterable) -> EmbeddingStore:
    """Read a JSON-lines store: a {"dimension": d} header, then {owner_id, kind, rows} records"""
    dimension = None
    sentences: Dict[str, TokenEmbeddings] = {}
    types: Dict[str, TokenEmbeddings] = {}
    for line_no, payload in read_records(source, EmbeddingStoreError):
        if dimension is None:
            dim = payload.get("dimension")
            if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
                raise EmbeddingStoreError("first record must be a header {\"dimension\": d}", line=line_no)
            dimension = dim
            continue
        owner, kind = payload.get("owner_id"), payload.get("kind")
        if not isinstance(owner, str) or kind not in ("sentence", "type"):
            raise EmbeddingStoreError("record needs owner_id and kind sentence|type", line=line_no)
        target = sentences if kind == "sentence" else types
        if owner in target:
            raise EmbeddingStoreError(f"duplicate {kind} embedding {owner!r}", line=line_no)
        try:
            target[owner] = make_embeddings(owner, payload.get("rows"), dimension)
        except EmbeddingStoreError as exc:
            raise EmbeddingStoreError(str(exc), line=line_no) from exc
    if dimension is None:
        return EmbeddingStore(dimension=0)
    return EmbeddingStore(dimension=dimension, sentences=sentences, types=types)


def write_embedding_store(store: EmbeddingStore, sink: IO[bytes]) -> int:
    def records():
        yield {"dimension": store.dimension}
        for kind, group in (("sentence", store.sentences), ("type", store.types)):
            for owner in sorted(group):
                yield {"owner_id": owner, "kind": kind, "rows": group[owner].rows.tolist()}

    return write_records(records(), sink)


def _token_vector(token: str, dimension: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    vector = rng.standard_normal(dimension)
    return vector / np.linalg.norm(vector)


def _token_rows(owner: str, text: str, dimension: int, seed: int) -> TokenEmbeddings:
    tokens = _TOKEN.findall(text.lower()) or ["<empty>"]
    return make_embeddings(owner, [_token_vector(token, dimension, seed) for token in tokens])


def synthesize_store(ontology: Ontology, records: Sequence[SentenceRecord],
                     dimension: int = 16, seed: int = 0) -> EmbeddingStore:
    """Deterministic pseudo-embeddings: one unit row per lower-cased word token, equal tokens share rows"""
    if dimension < 1:
        raise ValueError("dimension must be positive")
    sentences = {record.id: _token_rows(record.id, record.text, dimension, seed) for record in records}
    types = {
        type_def.id: _token_rows(type_def.id, f"{type_def.name} {type_def.description}", dimension, seed)
        for type_def in ontology
    }
    logger.info("Synthesized embedding store", sentences=len(sentences), types=len(types), dimension=dimension)
    return EmbeddingStore(dimension=dimension, sentences=sentences, types=types)

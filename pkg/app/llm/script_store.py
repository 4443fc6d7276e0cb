import hashlib
import json
from typing import IO, Dict, Iterable, Iterator, Optional, Tuple

from app.exceptions import ScriptLoadError
from app.models.llm import PromptRequest
from app.utils.jsonl import read_records, write_records


def request_digest(request: PromptRequest, attempt: int) -> str:
    """Content digest of (system_text, user_text, tag, attempt) used as the replay key"""
    payload = json.dumps([request.system_text, request.user_text, request.tag, attempt],
                         ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ScriptStore:
    """Replay responses keyed by request digest"""

    def __init__(self, entries: Optional[Dict[str, str]] = None):
        self._entries: Dict[str, str] = dict(entries or {})

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, digest: object) -> bool:
        return digest in self._entries

    def __iter__(self) -> Iterator[Tuple[str, str]]:
        return iter(sorted(self._entries.items()))

    def lookup(self, digest: str) -> Optional[str]:
        return self._entries.get(digest)

    def add(self, digest: str, response: str) -> None:
        known = self._entries.get(digest)
        if known is not None and known != response:
            raise ScriptLoadError(f"digest {digest} already scripted with a different response")
        self._entries[digest] = response

    def put(self, request: PromptRequest, attempt: int, response: str) -> str:
        """Script the response for one request attempt; returns its digest"""
        digest = request_digest(request, attempt)
        self.add(digest, response)
        return digest


def load_script(source: Iterable) -> ScriptStore:
    entries: Dict[str, str] = {}
    first_seen: Dict[str, int] = {}
    for line_no, payload in read_records(source, ScriptLoadError):
        digest, response = payload.get("digest"), payload.get("response")
        if not isinstance(digest, str) or not digest or not isinstance(response, str):
            raise ScriptLoadError("entry needs a digest and a response string", line=line_no)
        if digest in first_seen:
            raise ScriptLoadError(f"duplicate digest {digest} (first on line {first_seen[digest]})", line=line_no)
        first_seen[digest] = line_no
        entries[digest] = response
    return ScriptStore(entries)


def write_script(store: ScriptStore, sink: IO[bytes]) -> int:
    return write_records(({"digest": digest, "response": response} for digest, response in store), sink)

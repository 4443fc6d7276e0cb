import time
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple, TypeVar

import httpx

from app.exceptions import ConfigError, OutputParseError, ParseExhaustedError
from app.llm.backends import ChatBackend, build_backend
from app.llm.script_store import ScriptStore, request_digest
from app.models.llm import BackendDescriptor, Completion, PromptRequest
from app.monitoring.metrics import record_parse_failure, track_llm_request
from app.utils.logging import get_logger, log_llm_call

logger = get_logger(__name__)

T = TypeVar("T")


@track_llm_request
async def complete(backend: ChatBackend, request: PromptRequest, attempt: int = 1) -> Completion:
    """Send one request attempt and return the backend's text verbatim"""
    if attempt < 1:
        raise ValueError("attempt must be at least 1")
    digest = request_digest(request, attempt)
    start_time = time.time()
    try:
        text = await backend.send(request, attempt)
    except Exception as e:
        log_llm_call(logger, backend.name, request.tag, attempt, digest,
                     duration=time.time() - start_time, outcome=type(e).__name__)
        raise
    log_llm_call(logger, backend.name, request.tag, attempt, digest, duration=time.time() - start_time)
    return Completion(text=text, backend_name=backend.name, attempt=attempt)


async def complete_parsed(backend: ChatBackend, request: PromptRequest, parser: Callable[[str], T],
                          max_attempts: int, first_attempt: int = 1) -> Tuple[T, int]:
    """Re-ask until the parser accepts the output; returns (value, attempts used)"""
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    last_text = ""
    for used in range(1, max_attempts + 1):
        completion = await complete(backend, request, first_attempt + used - 1)
        try:
            return parser(completion.text), used
        except OutputParseError as e:
            record_parse_failure(backend.name)
            logger.info("Unparseable output", backend=backend.name, tag=request.tag,
                        attempt=completion.attempt, error=str(e))
            last_text = completion.text
    raise ParseExhaustedError(backend.name, request.tag, max_attempts, last_text)


class Gateway:
    """The run's backends by name"""

    def __init__(self, backends: Iterable[ChatBackend]):
        self._backends: Dict[str, ChatBackend] = {}
        for backend in backends:
            if backend.name in self._backends:
                raise ConfigError(f"duplicate backend name {backend.name!r}")
            self._backends[backend.name] = backend

    @classmethod
    def from_descriptors(cls, descriptors: Iterable[BackendDescriptor],
                         stores: Optional[Mapping[str, ScriptStore]] = None,
                         client: Optional[httpx.AsyncClient] = None) -> "Gateway":
        stores = stores or {}
        return cls(build_backend(d, stores.get(d.name), client) for d in descriptors)

    def __contains__(self, name: object) -> bool:
        return name in self._backends

    def backend(self, name: str) -> ChatBackend:
        try:
            return self._backends[name]
        except KeyError:
            raise ConfigError(f"unknown backend {name!r}") from None

    async def aclose(self) -> None:
        for backend in self._backends.values():
            await backend.aclose()

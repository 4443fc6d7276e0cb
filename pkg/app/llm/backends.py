import asyncio
import os
from abc import ABC, abstractmethod
from contextlib import asynccontextmanager
from pathlib import Path
from typing import AsyncIterator, Optional

import httpx
from tenacity import AsyncRetrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from app.exceptions import BackendTransportError, ConfigError, MissingScriptError
from app.llm.script_store import ScriptStore, load_script, request_digest
from app.models.llm import BackendDescriptor, PromptRequest
from app.utils.logging import get_logger

logger = get_logger(__name__)

RETRY_STATUS = frozenset({408, 409, 429, 500, 502, 503, 504})


class _RetryableStatus(Exception):
    def __init__(self, status_code: int, body: str):
        self.status_code = status_code
        super().__init__(f"HTTP {status_code}: {body[:200]}")


class ChatBackend(ABC):
    """A chat-completion backend capped at max_concurrent_requests in-flight calls"""

    def __init__(self, descriptor: BackendDescriptor):
        self.descriptor = descriptor
        self._semaphore: Optional[asyncio.Semaphore] = None
        self.in_flight = 0
        self.peak_in_flight = 0
        self.calls = 0

    @property
    def name(self) -> str:
        return self.descriptor.name

    @asynccontextmanager
    async def _slot(self) -> AsyncIterator[None]:
        # created on first use so it binds to the running loop
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self.descriptor.max_concurrent_requests)
        async with self._semaphore:
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            try:
                yield
            finally:
                self.in_flight -= 1

    async def send(self, request: PromptRequest, attempt: int) -> str:
        """Return the backend's raw text for one request attempt"""
        async with self._slot():
            self.calls += 1
            return await self._send(request, attempt)

    @abstractmethod
    async def _send(self, request: PromptRequest, attempt: int) -> str:
        pass

    async def aclose(self) -> None:
        pass


class ScriptedBackend(ChatBackend):
    """Deterministic replay of scripted responses"""

    def __init__(self, descriptor: BackendDescriptor, store: Optional[ScriptStore] = None):
        super().__init__(descriptor)
        self.store = store if store is not None else ScriptStore()

    async def _send(self, request: PromptRequest, attempt: int) -> str:
        digest = request_digest(request, attempt)
        if self.descriptor.latency_seconds:
            await asyncio.sleep(self.descriptor.latency_seconds)
        else:
            await asyncio.sleep(0)
        response = self.store.lookup(digest)
        if response is None:
            raise MissingScriptError(self.name, digest)
        return response


class HttpBackend(ChatBackend):
    """Client for any OpenAI-style /chat/completions endpoint"""

    def __init__(self, descriptor: BackendDescriptor, client: Optional[httpx.AsyncClient] = None):
        super().__init__(descriptor)
        self._client = client
        self._owns_client = client is None

    def _client_for_run(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient(timeout=self.descriptor.timeout_seconds)
            logger.info("HTTP backend ready", backend=self.name, endpoint=self.descriptor.endpoint)
        return self._client

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        env_name = self.descriptor.api_key_env
        if env_name:
            key = os.getenv(env_name)
            if not key:
                raise ConfigError(f"backend {self.name!r}: environment variable {env_name} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, request: PromptRequest) -> dict:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        payload = {
            "messages": messages,
            "temperature": request.params.effective_temperature,
            "max_tokens": request.params.max_output_tokens,
        }
        if self.descriptor.model:
            payload["model"] = self.descriptor.model
        return payload

    async def _post(self, payload: dict, headers: dict) -> httpx.Response:
        response = await self._client_for_run().post(self.descriptor.endpoint, json=payload, headers=headers)
        if response.status_code in RETRY_STATUS:
            raise _RetryableStatus(response.status_code, response.text)
        return response

    async def _send(self, request: PromptRequest, attempt: int) -> str:
        payload, headers = self._payload(request), self._headers()
        retrying = AsyncRetrying(
            stop=stop_after_attempt(self.descriptor.transport_retries),
            wait=wait_exponential(multiplier=self.descriptor.backoff_seconds, max=30),
            retry=retry_if_exception_type((httpx.TransportError, _RetryableStatus)),
            reraise=True,
        )
        try:
            response = await retrying(self._post, payload, headers)
        except (httpx.TransportError, _RetryableStatus) as e:
            raise BackendTransportError(
                f"backend {self.name!r} failed after {self.descriptor.transport_retries} tries: {e}") from e
        if response.status_code >= 400:
            raise BackendTransportError(f"backend {self.name!r} returned HTTP {response.status_code}")
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise BackendTransportError(f"backend {self.name!r} returned an unexpected body") from e
        return content or ""

    async def aclose(self) -> None:
        if self._client is not None and self._owns_client:
            await self._client.aclose()
            self._client = None


def build_backend(descriptor: BackendDescriptor, store: Optional[ScriptStore] = None,
                  client: Optional[httpx.AsyncClient] = None) -> ChatBackend:
    if descriptor.kind == "http":
        return HttpBackend(descriptor, client=client)
    if store is None and descriptor.script_path is not None:
        store = load_script_file(descriptor.script_path)
    return ScriptedBackend(descriptor, store)


def load_script_file(path: Path) -> ScriptStore:
    with Path(path).open("rb") as fh:
        store = load_script(fh)
    logger.info("Replay script loaded", path=str(path), entries=len(store))
    return store

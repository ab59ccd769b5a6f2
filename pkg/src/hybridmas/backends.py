"""Chat-completion backends: a remote HTTP client and a deterministic
scripted backend for tests.

All network use lives here. The wire format is the widely deployed
chat-completions JSON shape (POST <base_url>/v1/chat/completions), which
covers both cloud APIs and local vLLM-style servers with one client.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import requests

from .core import TokenUsage

logger = logging.getLogger(__name__)

CHAT_COMPLETIONS_PATH = "/v1/chat/completions"
VALID_ROLES = ("system", "user", "assistant")


class BackendError(Exception):
    pass


class TransportError(BackendError):
    """Network failure or HTTP >= 500; retriable."""


class RejectedError(BackendError):
    """HTTP 4xx; never retried."""

    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"request rejected with HTTP {status}: {detail}")
        self.status = status


class UsageMissingError(BackendError):
    """The endpoint returned a completion without a usage block."""


class ScriptExhaustedError(BackendError):
    """The scripted backend ran out of entries."""


class NoMatchingEntryError(BackendError):
    """No unconsumed scripted entry matches the request."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in VALID_ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass
class ChatRequest:
    messages: list[ChatMessage]
    temperature: float = 0.0
    max_generated_tokens: int = 1024
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_generated_tokens <= 0:
            raise ValueError("max_generated_tokens must be > 0")

    def concatenated_content(self) -> str:
        return "".join(m.content for m in self.messages)


@dataclass
class ChatResponse:
    text: str
    usage: TokenUsage
    wall_time_ms: int = 0


def user_request(
    content: str,
    temperature: float = 0.0,
    max_generated_tokens: int = 1024,
    seed: Optional[int] = None,
) -> ChatRequest:
    return ChatRequest(
        [ChatMessage("user", content)], temperature, max_generated_tokens, seed
    )


def whitespace_token_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted completion; if match is set, the entry only fires when
    that substring occurs in the rendered request text."""

    response: str
    match: Optional[str] = None


class ScriptedBackend:
    """Deterministic backend that replays a fixed script.

    Each complete() consumes the first unconsumed entry whose match (if
    any) occurs in the concatenated request text. Usage is synthesized as
    whitespace-token counts; wall time is always 0 so logs stay
    byte-reproducible. Consumption is serialized by an internal lock.
    """

    def __init__(self, script: Sequence[ScriptEntry | dict | str]):
        entries = []
        for item in script:
            if isinstance(item, ScriptEntry):
                entries.append(item)
            elif isinstance(item, str):
                entries.append(ScriptEntry(item))
            else:
                entries.append(ScriptEntry(item["response"], item.get("match")))
        if not entries:
            raise ValueError("script must be non-empty")
        self._entries = entries
        self._consumed = [False] * len(entries)
        self._lock = threading.Lock()
        self.requests: list[str] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        text = request.concatenated_content()
        with self._lock:
            self.requests.append(text)
            if all(self._consumed):
                raise ScriptExhaustedError("script exhausted")
            for i, entry in enumerate(self._entries):
                if self._consumed[i]:
                    continue
                if entry.match is None or entry.match in text:
                    self._consumed[i] = True
                    usage = TokenUsage(
                        prompt_tokens=whitespace_token_count(text),
                        cached_tokens=0,
                        generated_tokens=whitespace_token_count(entry.response),
                    )
                    return ChatResponse(entry.response, usage, wall_time_ms=0)
            raise NoMatchingEntryError("no unconsumed entry matches the request")

    def count_tokens(self, text: str) -> Optional[int]:
        return whitespace_token_count(text)

    @property
    def remaining(self) -> int:
        with self._lock:
            return sum(1 for c in self._consumed if not c)


class HttpChatBackend:
    """Client for a chat-completions endpoint.

    The credential is read from the environment variable named in config
    (never stored). Transport failures are retried up to max_retries times
    with capped exponential backoff; rejections (4xx) are not retried.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        credential_env: Optional[str] = None,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        backoff_cap_s: float = 8.0,
        timeout_s: float = 120.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.credential_env = credential_env
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.backoff_cap_s = backoff_cap_s
        self.timeout_s = timeout_s
        self.attempts_logged = 0

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.credential_env:
            credential = os.environ.get(self.credential_env, "")
            if credential:
                headers["Authorization"] = f"Bearer {credential}"
        return headers

    def _payload(self, request: ChatRequest) -> dict:
        payload = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_generated_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        return payload

    def complete(self, request: ChatRequest) -> ChatResponse:
        url = self.base_url + CHAT_COMPLETIONS_PATH
        payload = self._payload(request)
        last_error: Optional[Exception] = None
        started = time.monotonic()
        for attempt in range(1 + self.max_retries):
            if attempt:
                time.sleep(min(self.backoff_cap_s, self.backoff_s * 2 ** (attempt - 1)))
            self.attempts_logged += 1
            try:
                http_response = requests.post(
                    url, json=payload, headers=self._headers(), timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = TransportError(f"request failed: {exc}")
                logger.warning("chat call attempt %d failed: %s", attempt + 1, exc)
                continue
            if http_response.status_code >= 500:
                last_error = TransportError(f"HTTP {http_response.status_code}")
                logger.warning(
                    "chat call attempt %d got HTTP %d", attempt + 1, http_response.status_code
                )
                continue
            if http_response.status_code >= 400:
                raise RejectedError(http_response.status_code, http_response.text[:500])
            wall_time_ms = int((time.monotonic() - started) * 1000)
            return self._parse(http_response.json(), wall_time_ms, attempt + 1)
        raise last_error if last_error is not None else TransportError("no attempts made")

    def _parse(self, body: dict, wall_time_ms: int, attempts: int) -> ChatResponse:
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise TransportError(f"malformed completion body: {str(body)[:300]}")
        usage_block = body.get("usage")
        if not usage_block:
            raise UsageMissingError("endpoint returned no usage block")
        prompt_tokens = int(usage_block.get("prompt_tokens", 0))
        generated_tokens = int(usage_block.get("completion_tokens", 0))
        details = usage_block.get("prompt_tokens_details") or {}
        cached_tokens = int(details.get("cached_tokens", 0) or 0)
        usage = TokenUsage(prompt_tokens, min(cached_tokens, prompt_tokens), generated_tokens)
        logger.info(
            "chat call to %s completed in %d ms after %d attempt(s): %d prompt / %d generated tokens",
            self.base_url,
            wall_time_ms,
            attempts,
            prompt_tokens,
            generated_tokens,
        )
        return ChatResponse(text, usage, wall_time_ms)

    def count_tokens(self, text: str) -> Optional[int]:
        return None


def complete(backend, request: ChatRequest) -> ChatResponse:
    """Uniform entry point over any backend object with a complete method."""
    return backend.complete(request)

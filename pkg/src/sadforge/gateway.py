"""Uniform client for chat-completion and embedding endpoints.

One Gateway fronts two providers (chat, embeddings) speaking the
OpenAI-compatible wire shape. It owns retries with jittered exponential
backoff, an optional rate limiter, and an append-only JSONL transcript of
every attempt. Providers are duck-typed: anything with
``chat(payload, meta)`` / ``embed(payload, meta)`` returning the parsed
response body works, which is how the scripted mock provider plugs in.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import requests

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.openai.com"
# repetition_penalty rides the wire as frequency_penalty: penalty + offset.
DEFAULT_PENALTY_OFFSET = -1.0


class GatewayError(Exception):
    """Base class for provider call failures."""


class TransientError(GatewayError):
    """Retryable failure: timeout, connection drop, HTTP 429 or 5xx."""

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"transient failure ({kind})" + (f": {detail}" if detail else ""))
        self.kind = kind


class TransientExhausted(GatewayError):
    def __init__(self, attempts: int, last: Optional[TransientError]):
        super().__init__(f"gave up after {attempts} attempts (last: {last})")
        self.attempts = attempts
        self.last = last


class ProviderRejected(GatewayError):
    """Terminal HTTP 4xx other than 429."""

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"provider rejected request with HTTP {status}: {body[:200]}")
        self.status = status


class MalformedResponse(GatewayError):
    """Response body does not match the expected wire shape."""


@dataclass(frozen=True)
class AgentConfig:
    """Sampling configuration for one agent role."""

    role_name: str
    model: str
    temperature: float
    repetition_penalty: float
    max_tokens: int
    system_prompt: str

    def __post_init__(self):
        if not self.role_name:
            raise ValueError("role_name must be non-empty")
        if not self.model:
            raise ValueError(f"{self.role_name}: model must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"{self.role_name}: temperature must be in [0, 2]")
        if self.repetition_penalty <= 0.0:
            raise ValueError(f"{self.role_name}: repetition_penalty must be > 0")
        if self.max_tokens < 1:
            raise ValueError(f"{self.role_name}: max_tokens must be >= 1")
        if not self.system_prompt:
            raise ValueError(f"{self.role_name}: system_prompt must be non-empty")


@dataclass
class ChatExchange:
    """Record of one completed logical chat call."""

    role_name: str
    request_messages: list
    response_text: str
    latency_s: float
    attempts: int
    provider: str


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    backoff_base_ms: float = 500.0
    multiplier: float = 2.0
    jitter: float = 0.2

    def backoff_s(self, attempt: int, rng: random.Random) -> float:
        """Delay after the given 1-based attempt, jittered by ±jitter."""
        base = (self.backoff_base_ms / 1000.0) * self.multiplier ** (attempt - 1)
        return base * (1.0 + self.jitter * (2.0 * rng.random() - 1.0))


@dataclass(frozen=True)
class EndpointProfile:
    """Where an endpoint lives and how to talk to it."""

    name: str
    base_url: str = DEFAULT_BASE_URL
    api_key: str = ""
    timeout_s: float = 60.0
    penalty_offset: float = DEFAULT_PENALTY_OFFSET

    @classmethod
    def from_env(cls, name: str, **overrides) -> "EndpointProfile":
        fields: dict[str, Any] = {
            "base_url": os.environ.get("SADFORGE_BASE_URL", DEFAULT_BASE_URL),
            "api_key": os.environ.get("SADFORGE_API_KEY", ""),
        }
        fields.update(overrides)
        return cls(name=name, **fields)


class RateLimiter:
    """Concurrency cap plus a token-bucket request rate, shared across workers."""

    def __init__(
        self,
        max_concurrency: int = 4,
        requests_per_second: Optional[float] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if requests_per_second is not None and requests_per_second <= 0:
            raise ValueError("requests_per_second must be positive")
        self._semaphore = threading.Semaphore(max_concurrency)
        self._rate = requests_per_second
        self._clock = clock
        self._sleep = sleep_fn
        self._lock = threading.Lock()
        self._tokens = 1.0 if requests_per_second else 0.0
        self._last_refill = clock()

    def _take_token(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(1.0, self._tokens + (now - self._last_refill) * self._rate)
                self._last_refill = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            self._sleep(wait)

    def __enter__(self):
        self._semaphore.acquire()
        if self._rate:
            try:
                self._take_token()
            except BaseException:
                self._semaphore.release()
                raise
        return self

    def __exit__(self, *exc_info):
        self._semaphore.release()
        return False


def _extract_chat_text(body: Any) -> str:
    try:
        text = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse(f"no choices[0].message.content in response: {str(body)[:200]}")
    if not isinstance(text, str):
        raise MalformedResponse("response content is not a string")
    return text


def _extract_vectors(body: Any, expected: int) -> list:
    try:
        rows = body["data"]
        vectors = [row["embedding"] for row in rows]
    except (KeyError, TypeError):
        raise MalformedResponse(f"no data[i].embedding in response: {str(body)[:200]}")
    if len(vectors) != expected:
        raise MalformedResponse(f"expected {expected} vectors, got {len(vectors)}")
    dims = {len(v) for v in vectors}
    if len(dims) > 1 or dims == {0}:
        raise MalformedResponse(f"inconsistent embedding dimensions: {sorted(dims)}")
    return [[float(x) for x in v] for v in vectors]


class Gateway:
    """Retry, rate-limit, and log calls against a chat and an embeddings provider.

    Shareable across threads. ``penalty_offset`` mirrors the chat endpoint
    profile; the default −1.0 sends repetition_penalty 1.2 as
    frequency_penalty 0.2. ``sleep_fn`` and ``rng`` are injectable so tests
    exercise backoff without waiting.
    """

    def __init__(
        self,
        chat_provider=None,
        embed_provider=None,
        *,
        retry: Optional[RetryPolicy] = None,
        limiter: Optional[RateLimiter] = None,
        penalty_offset: float = DEFAULT_PENALTY_OFFSET,
        embed_model: str = "hash-bow-256",
        transcript_path: Optional[Path] = None,
        sleep_fn: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        rng: Optional[random.Random] = None,
    ):
        self._chat_provider = chat_provider
        self._embed_provider = embed_provider
        self.retry = retry or RetryPolicy()
        self.limiter = limiter
        self.penalty_offset = penalty_offset
        self.embed_model = embed_model
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self._sleep = sleep_fn
        self._clock = clock
        self._rng = rng or random.Random()
        self._log_lock = threading.Lock()
        self.exchanges: list[ChatExchange] = []

    def chat(self, config: AgentConfig, messages: list, session: Optional[str] = None) -> str:
        """Send one chat completion; returns the first choice's text."""
        if self._chat_provider is None:
            raise GatewayError("no chat provider configured")
        if not messages:
            raise ValueError("messages must be non-empty")
        if any(m.get("role") == "system" for m in messages):
            raise ValueError("system prompt is inserted by the gateway; do not pass system messages")
        payload = {
            "model": config.model,
            "messages": [{"role": "system", "content": config.system_prompt}, *messages],
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
            "frequency_penalty": round(config.repetition_penalty + self.penalty_offset, 6),
        }
        meta = {"role": config.role_name, "session": session}
        started = self._clock()
        body, attempts = self._call_with_retries("chat", self._chat_provider.chat, payload, meta)
        text = _extract_chat_text(body)
        self.exchanges.append(
            ChatExchange(
                role_name=config.role_name,
                request_messages=payload["messages"],
                response_text=text,
                latency_s=self._clock() - started,
                attempts=attempts,
                provider=getattr(self._chat_provider, "name", type(self._chat_provider).__name__),
            )
        )
        self._log("chat", meta, payload, attempts, status="ok", response=text)
        return text

    def embed(self, texts: list, session: Optional[str] = None) -> list:
        """Embed a batch of texts; one vector per text, order preserved."""
        if self._embed_provider is None:
            raise GatewayError("no embeddings provider configured")
        if not texts:
            raise ValueError("texts must be non-empty")
        if any(not isinstance(t, str) or t == "" for t in texts):
            raise ValueError("every text in the batch must be a non-empty string")
        payload = {"model": self.embed_model, "input": list(texts)}
        meta = {"role": "embeddings", "session": session}
        body, attempts = self._call_with_retries("embed", self._embed_provider.embed, payload, meta)
        vectors = _extract_vectors(body, expected=len(texts))
        self._log("embed", meta, payload, attempts, status="ok")
        return vectors

    def _call_with_retries(self, kind: str, call, payload: dict, meta: dict):
        last: Optional[TransientError] = None
        for attempt in range(1, self.retry.max_attempts + 1):
            try:
                if self.limiter is not None:
                    with self.limiter:
                        body = call(payload, meta)
                else:
                    body = call(payload, meta)
                return body, attempt
            except TransientError as err:
                last = err
                self._log(kind, meta, payload, attempt, status=f"transient:{err.kind}")
                logger.warning("%s call (%s) attempt %d failed: %s", kind, meta["role"], attempt, err)
                if attempt < self.retry.max_attempts:
                    self._sleep(self.retry.backoff_s(attempt, self._rng))
            except (ProviderRejected, MalformedResponse) as err:
                self._log(kind, meta, payload, attempt, status=type(err).__name__)
                raise
        raise TransientExhausted(self.retry.max_attempts, last)

    def _log(self, kind, meta, payload, attempt, status, response=None):
        if self.transcript_path is None:
            return
        line = {
            "kind": kind,
            "role": meta["role"],
            "session": meta["session"],
            "attempt": attempt,
            "status": status,
            "request": payload,
        }
        if response is not None:
            line["response"] = response
        encoded = json.dumps(line, ensure_ascii=False, sort_keys=True)
        with self._log_lock:
            with open(self.transcript_path, "a", encoding="utf-8") as handle:
                handle.write(encoded + "\n")


class HttpProvider:
    """OpenAI-compatible HTTP transport for one endpoint profile."""

    def __init__(self, profile: EndpointProfile, session: Optional[requests.Session] = None):
        self.profile = profile
        self.name = profile.name
        self._session = session or requests.Session()

    def chat(self, payload: dict, meta: Optional[dict] = None) -> Any:
        return self._post("/v1/chat/completions", payload)

    def embed(self, payload: dict, meta: Optional[dict] = None) -> Any:
        return self._post("/v1/embeddings", payload)

    def _post(self, path: str, payload: dict) -> Any:
        url = self.profile.base_url.rstrip("/") + path
        headers = {}
        if self.profile.api_key:
            headers["Authorization"] = f"Bearer {self.profile.api_key}"
        try:
            response = self._session.post(url, json=payload, headers=headers, timeout=self.profile.timeout_s)
        except requests.Timeout as exc:
            raise TransientError("timeout", str(exc)) from exc
        except requests.ConnectionError as exc:
            raise TransientError("connection", str(exc)) from exc
        if response.status_code == 429:
            raise TransientError("http_429")
        if response.status_code >= 500:
            raise TransientError(f"http_{response.status_code}")
        if response.status_code >= 400:
            raise ProviderRejected(response.status_code, response.text)
        try:
            return response.json()
        except ValueError as exc:
            raise MalformedResponse(f"response body is not JSON: {response.text[:200]}") from exc


class LocalHashEmbedder:
    """Deterministic bag-of-words embedding provider; needs no network.

    Each whitespace-separated lowercased word lands in a hashed bucket with a
    hashed sign. Texts with no word tokens, or whose words cancel exactly, get
    a one-hot fallback so downstream cosine math never sees a zero vector.
    """

    name = "local-hash"

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension

    def embed(self, payload: dict, meta: Optional[dict] = None) -> dict:
        vectors = [self._vector(text) for text in payload["input"]]
        return {"data": [{"embedding": v} for v in vectors]}

    def _vector(self, text: str) -> list:
        vec = [0.0] * self.dimension
        for word in text.lower().split():
            digest = hashlib.sha256(word.encode("utf-8")).digest()
            index = int.from_bytes(digest[:4], "big") % self.dimension
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[index] += sign
        if not any(vec):
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            vec[int.from_bytes(digest[:4], "big") % self.dimension] = 1.0
        return vec

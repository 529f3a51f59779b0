"""Completion backends: remote chat-completion endpoint and scripted responder.

The synthetic latch backend lives in :mod:`latchbench.simulator`; it shares
the :class:`Backend` surface defined here.
"""

from __future__ import annotations

import email.utils
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx

from .tokens import estimate_tokens

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


class BackendError(RuntimeError):
    """A completion call failed. ``retryable`` marks transient failures."""

    retryable = False


class TransientBackendError(BackendError):
    retryable = True

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class BackendExhausted(BackendError):
    """Retries ran out."""


class AuthError(BackendError):
    """Credentials missing or rejected; never retried."""


class PatternMiss(BackendError):
    """A scripted backend had no fixture entry for the prompt."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"invalid role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")

    def to_json(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}

    @classmethod
    def from_json(cls, obj: dict[str, str]) -> "ChatMessage":
        return cls(obj["role"], obj["content"])


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.0
    max_output_tokens: int = 1024
    model_id: str = ""
    # Only scripted/synthetic backends consume the seed; remote ignores it.
    seed: int = 0


@dataclass
class Completion:
    text: str
    usage: dict[str, int]
    backend_id: str


class BackendStats:
    """Thread-safe per-backend call counters."""

    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0
        self.retries = 0
        self.failures = 0

    def add(self, calls: int = 0, retries: int = 0, failures: int = 0) -> None:
        with self._lock:
            self.calls += calls
            self.retries += retries
            self.failures += failures

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {"calls": self.calls, "retries": self.retries, "failures": self.failures}


class Backend:
    kind = "abstract"

    def __init__(self, backend_id: str):
        self.backend_id = backend_id
        self.stats = BackendStats()

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams | None = None) -> Completion:
        raise NotImplementedError


def complete(backend: Backend, messages: Sequence[ChatMessage], params: CompletionParams | None = None) -> Completion:
    return backend.complete(messages, params or CompletionParams())


def last_user_message(messages: Sequence[ChatMessage]) -> str:
    for m in reversed(messages):
        if m.role == "user":
            return m.content
    return ""


def _estimate_usage(messages: Sequence[ChatMessage], text: str) -> dict[str, int]:
    return {
        "prompt_tokens": sum(estimate_tokens(m.content) for m in messages),
        "completion_tokens": estimate_tokens(text),
        "estimated": 1,
    }


# ------------------------------------------------------------------ scripted

class ScriptedBackend(Backend):
    """Deterministic responder: longest ``match_prefix`` over the last user message wins."""

    kind = "scripted"

    def __init__(self, backend_id: str, entries: Sequence[tuple[str, str]]):
        super().__init__(backend_id)
        # Longest prefixes first; stable order among equal lengths keeps file order.
        self._entries = sorted(entries, key=lambda e: -len(e[0]))

    @classmethod
    def from_fixture(cls, backend_id: str, path: str | Path) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, list):
            raise ValueError(f"scripted fixture {path} must be a JSON list")
        entries = []
        for i, item in enumerate(data):
            try:
                entries.append((str(item["match_prefix"]), str(item["response"])))
            except (KeyError, TypeError) as exc:
                raise ValueError(f"scripted fixture {path}: entry {i} malformed") from exc
        return cls(backend_id, entries)

    def complete(self, messages, params=None):
        self.stats.add(calls=1)
        prompt = last_user_message(messages)
        for prefix, response in self._entries:
            if prompt.startswith(prefix):
                return Completion(response, _estimate_usage(messages, response), self.backend_id)
        self.stats.add(failures=1)
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]
        raise PatternMiss(f"scripted backend {self.backend_id!r}: no pattern matches prompt sha256:{digest}")


# -------------------------------------------------------------------- remote

@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 1.0
    factor: float = 2.0
    max_delay: float = 60.0
    jitter: bool = True

    def delay(self, attempt: int, retry_after: float | None = None, rng: random.Random | None = None) -> float:
        """Seconds to wait after failed ``attempt`` (1-based)."""
        if retry_after is not None:
            return min(max(retry_after, 0.0), self.max_delay)
        d = min(self.base_delay * self.factor ** (attempt - 1), self.max_delay)
        if self.jitter:
            d *= (rng or random).uniform(0.5, 1.0)
        return d


class TokenBucket:
    """Blocking token bucket; ``rate`` tokens per second, ``capacity`` burst."""

    def __init__(self, rate: float, capacity: float | None = None, clock: Callable[[], float] = time.monotonic):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self, sleep: Callable[[float], None] = time.sleep) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            sleep(wait)


def parse_retry_after(value: str | None) -> float | None:
    if not value:
        return None
    try:
        return float(value)
    except ValueError:
        pass
    try:
        when = email.utils.parsedate_to_datetime(value)
    except (TypeError, ValueError):
        return None
    return max(0.0, when.timestamp() - time.time())


RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


@dataclass
class RemoteDescriptor:
    backend_id: str
    endpoint: str
    model_id: str
    api_key_env: str
    headers: dict[str, str] = field(default_factory=dict)
    timeout: float = 120.0
    max_concurrency: int = 4
    requests_per_minute: float | None = None


class RemoteBackend(Backend):
    """OpenAI-style chat-completion client with backoff, concurrency cap and rate limit."""

    kind = "remote"

    def __init__(
        self,
        descriptor: RemoteDescriptor,
        retry: RetryPolicy | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(descriptor.backend_id)
        self.descriptor = descriptor
        self.retry = retry or RetryPolicy()
        self._client = client or httpx.Client(timeout=descriptor.timeout)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, descriptor.max_concurrency))
        rpm = descriptor.requests_per_minute
        self._bucket = TokenBucket(rpm / 60.0, capacity=max(1.0, rpm / 60.0)) if rpm else None

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.descriptor.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.descriptor.api_key_env} is not set")
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        headers.update(self.descriptor.headers)
        return headers

    def _post_once(self, payload: dict[str, Any]) -> dict[str, Any]:
        try:
            resp = self._client.post(self.descriptor.endpoint, json=payload, headers=self._headers())
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"{self.backend_id}: authentication rejected ({resp.status_code})")
        if resp.status_code in RETRYABLE_STATUS:
            raise TransientBackendError(
                f"{self.backend_id}: HTTP {resp.status_code}",
                retry_after=parse_retry_after(resp.headers.get("retry-after")),
            )
        if resp.status_code >= 400:
            raise BackendError(f"{self.backend_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransientBackendError(f"{self.backend_id}: non-JSON response") from exc

    def complete(self, messages, params=None):
        params = params or CompletionParams()
        payload = {
            "model": params.model_id or self.descriptor.model_id,
            "messages": [m.to_json() for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        }
        self.stats.add(calls=1)
        last_exc: Exception | None = None
        for attempt in range(1, self.retry.max_attempts + 1):
            if self._bucket:
                self._bucket.acquire(self._sleep)
            try:
                with self._slots:
                    body = self._post_once(payload)
                text = body["choices"][0]["message"]["content"] or ""
            except TransientBackendError as exc:
                last_exc = exc
                if attempt == self.retry.max_attempts:
                    break
                self.stats.add(retries=1)
                wait = self.retry.delay(attempt, exc.retry_after)
                logger.warning("%s: %s; retrying in %.2fs (attempt %d)", self.backend_id, exc, wait, attempt)
                self._sleep(wait)
                continue
            except (KeyError, IndexError, TypeError) as exc:
                self.stats.add(failures=1)
                raise BackendError(f"{self.backend_id}: unexpected response shape") from exc
            except BackendError:
                self.stats.add(failures=1)
                raise
            usage = body.get("usage") or {}
            if "prompt_tokens" in usage and "completion_tokens" in usage:
                usage = {"prompt_tokens": int(usage["prompt_tokens"]), "completion_tokens": int(usage["completion_tokens"])}
            else:
                usage = _estimate_usage(messages, text)
            return Completion(text, usage, self.backend_id)
        self.stats.add(failures=1)
        raise BackendExhausted(f"{self.backend_id}: retries exhausted after {self.retry.max_attempts} attempts: {last_exc}")

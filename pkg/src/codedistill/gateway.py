"""Uniform chat-completion client over teacher/student/judge endpoints.

One :class:`Gateway` instance is shared by all pipeline workers. It speaks
the de-facto chat-completions JSON wire shape through a pluggable backend:
``HttpBackend`` for real endpoints, ``MockBackend``/``RulesBackend`` for
offline scripted runs, and ``RecordingBackend``/``ReplayBackend`` for
record-then-replay fixtures. The gateway enforces per-endpoint concurrency
and rate limits, retries transient failures with capped exponential backoff
(full jitter), and accounts token usage and dollar cost in a
:class:`CostLedger`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import requests

from .domain import SamplingConfig
from .prompting import ChatTurn

log = logging.getLogger(__name__)


class GatewayError(Exception):
    """Base class for gateway failures."""


class AuthError(GatewayError):
    """Non-retryable authentication/authorization failure."""


class MalformedResponseError(GatewayError):
    """The endpoint answered with something that is not a chat completion."""


class TransientBackendError(GatewayError):
    """Retryable failure: 5xx, rate limiting, connection problems."""


class ExhaustedRetriesError(GatewayError):
    """All retry attempts failed; carries the last underlying error."""


class UnscriptedRequestError(GatewayError):
    """A strict mock backend received a request it has no script for."""


class ReplayMissError(GatewayError):
    """A replay backend received a request absent from its transcript."""


@dataclass(frozen=True)
class EndpointConfig:
    name: str
    base_url: str = ""
    model: str = ""
    api_key_env: str = ""
    max_in_flight: int = 4
    requests_per_minute: int = 0  # 0 means unlimited
    price_per_1k_prompt_tokens: float = 0.0
    price_per_1k_completion_tokens: float = 0.0

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("endpoint name must be non-empty")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.requests_per_minute < 0:
            raise ValueError("requests_per_minute must be >= 0")
        if self.price_per_1k_prompt_tokens < 0 or self.price_per_1k_completion_tokens < 0:
            raise ValueError("prices must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EndpointConfig":
        return cls(**dict(d))


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class BackendReply:
    texts: tuple[str, ...]
    usage: Usage = Usage()


def estimate_usage(turns: Sequence[ChatTurn], texts: Sequence[str]) -> Usage:
    """Whitespace-token estimate for backends that report no usage."""
    return Usage(
        prompt_tokens=sum(len(t.content.split()) for t in turns),
        completion_tokens=sum(len(t.split()) for t in texts),
    )


def request_fingerprint(turns: Sequence[ChatTurn], sampling: SamplingConfig) -> str:
    """Stable hash identifying a chat request, used to key mock scripts."""
    payload = {
        "turns": [[t.role.value, t.content] for t in turns],
        "sampling": sampling.to_dict(),
    }
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class CostLedger:
    """Thread-safe per-endpoint accumulator of tokens, requests and cost."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._rows: dict[str, dict[str, float]] = {}

    def record(self, endpoint: EndpointConfig, usage: Usage) -> None:
        cost = (
            usage.prompt_tokens / 1000.0 * endpoint.price_per_1k_prompt_tokens
            + usage.completion_tokens / 1000.0 * endpoint.price_per_1k_completion_tokens
        )
        with self._lock:
            row = self._rows.setdefault(
                endpoint.name,
                {"prompt_tokens": 0, "completion_tokens": 0, "requests": 0, "cost": 0.0},
            )
            row["prompt_tokens"] += usage.prompt_tokens
            row["completion_tokens"] += usage.completion_tokens
            row["requests"] += 1
            row["cost"] += cost

    def snapshot(self) -> dict[str, dict[str, float]]:
        with self._lock:
            return {name: dict(row) for name, row in sorted(self._rows.items())}

    def total_cost(self) -> float:
        with self._lock:
            return sum(row["cost"] for row in self._rows.values())


def ledger_report(ledger: CostLedger) -> dict[str, dict[str, float]]:
    """Deterministic per-endpoint summary with a grand-total row."""
    rows = ledger.snapshot()
    total = {"prompt_tokens": 0, "completion_tokens": 0, "requests": 0, "cost": 0.0}
    for row in rows.values():
        for key in total:
            total[key] += row[key]
    rows["total"] = total
    return rows


class Backend(Protocol):
    def complete(
        self, endpoint: EndpointConfig, turns: Sequence[ChatTurn], sampling: SamplingConfig
    ) -> BackendReply:  # pragma: no cover - protocol signature
        ...


def _cycle_to(texts: Sequence[str], n: int) -> tuple[str, ...]:
    if not texts:
        raise MalformedResponseError("backend produced no completion texts")
    return tuple(texts[i % len(texts)] for i in range(n))


class MockBackend:
    """Scripted backend keyed by request fingerprint.

    ``script`` maps :func:`request_fingerprint` values to a list of reply
    texts for one call. In strict mode an unscripted request raises; in
    non-strict mode ``default`` (a callable of turns and sampling, or a
    plain string) answers instead.
    """

    def __init__(
        self,
        script: Mapping[str, Sequence[str]] | None = None,
        strict: bool = True,
        default: Callable[[Sequence[ChatTurn], SamplingConfig], Sequence[str]] | str | None = None,
        latency_s: float = 0.0,
    ) -> None:
        self.script = dict(script or {})
        self.strict = strict
        self.default = default
        self.latency_s = latency_s

    def complete(
        self, endpoint: EndpointConfig, turns: Sequence[ChatTurn], sampling: SamplingConfig
    ) -> BackendReply:
        if self.latency_s:
            time.sleep(self.latency_s)
        fp = request_fingerprint(turns, sampling)
        texts: Sequence[str] | None = self.script.get(fp)
        if texts is None:
            if self.strict or self.default is None:
                raise UnscriptedRequestError(f"no script for fingerprint {fp}")
            if callable(self.default):
                texts = self.default(turns, sampling)
            else:
                texts = [self.default]
        replies = _cycle_to(texts, sampling.n_samples)
        return BackendReply(texts=replies, usage=estimate_usage(turns, replies))


def mock_backend(
    script: Mapping[str, Sequence[str]],
    strict: bool = True,
    default: Callable[[Sequence[ChatTurn], SamplingConfig], Sequence[str]] | str | None = None,
) -> MockBackend:
    return MockBackend(script=script, strict=strict, default=default)


@dataclass(frozen=True)
class MockRule:
    """Substring-match rule for file-configured offline runs."""

    contains: str
    replies: tuple[str, ...]
    endpoint: str = ""  # empty matches any endpoint

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MockRule":
        return cls(
            contains=d["contains"],
            replies=tuple(d["replies"]),
            endpoint=d.get("endpoint", ""),
        )


class RulesBackend:
    """First-match scripted backend: rules match on endpoint and request text.

    Friendlier to hand-write than fingerprints; used for CLI mock configs.
    The last user turn is the matched text.
    """

    def __init__(self, rules: Sequence[MockRule], strict: bool = True) -> None:
        self.rules = tuple(rules)
        self.strict = strict

    def complete(
        self, endpoint: EndpointConfig, turns: Sequence[ChatTurn], sampling: SamplingConfig
    ) -> BackendReply:
        text = next(
            (t.content for t in reversed(turns) if t.role.value == "user"), turns[-1].content
        )
        for rule in self.rules:
            if rule.endpoint and rule.endpoint != endpoint.name:
                continue
            if rule.contains in text:
                replies = _cycle_to(rule.replies, sampling.n_samples)
                return BackendReply(texts=replies, usage=estimate_usage(turns, replies))
        if self.strict:
            raise UnscriptedRequestError(
                f"no rule matches request to {endpoint.name!r}: {text[:120]!r}"
            )
        return BackendReply(texts=_cycle_to([""], sampling.n_samples))


class RecordingBackend:
    """Wraps a live backend and appends every exchange to a JSONL transcript."""

    def __init__(self, inner: Backend, path: str | Path) -> None:
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()

    def complete(
        self, endpoint: EndpointConfig, turns: Sequence[ChatTurn], sampling: SamplingConfig
    ) -> BackendReply:
        reply = self.inner.complete(endpoint, turns, sampling)
        entry = {
            "fingerprint": request_fingerprint(turns, sampling),
            "endpoint": endpoint.name,
            "turns": [t.to_dict() for t in turns],
            "sampling": sampling.to_dict(),
            "texts": list(reply.texts),
            "usage": {
                "prompt_tokens": reply.usage.prompt_tokens,
                "completion_tokens": reply.usage.completion_tokens,
            },
        }
        line = json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)
        return reply


class ReplayBackend:
    """Serves a recorded transcript back, FIFO per request fingerprint."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._queues: dict[str, deque[dict[str, Any]]] = {}
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            self._queues.setdefault(entry["fingerprint"], deque()).append(entry)

    def complete(
        self, endpoint: EndpointConfig, turns: Sequence[ChatTurn], sampling: SamplingConfig
    ) -> BackendReply:
        fp = request_fingerprint(turns, sampling)
        with self._lock:
            queue = self._queues.get(fp)
            if not queue:
                raise ReplayMissError(f"no recorded reply for fingerprint {fp}")
            # Re-serve the sole remaining entry indefinitely so replays of
            # repeated identical requests stay deterministic.
            entry = queue.popleft() if len(queue) > 1 else queue[0]
        usage = entry.get("usage", {})
        return BackendReply(
            texts=tuple(entry["texts"]),
            usage=Usage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            ),
        )


class HttpBackend:
    """Plain chat-completions HTTP client (requests-based)."""

    def __init__(self, timeout_s: float = 120.0, session: requests.Session | None = None) -> None:
        self.timeout_s = timeout_s
        self.session = session or requests.Session()

    def complete(
        self, endpoint: EndpointConfig, turns: Sequence[ChatTurn], sampling: SamplingConfig
    ) -> BackendReply:
        import os

        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            key = os.environ.get(endpoint.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": endpoint.model,
            "messages": [t.to_dict() for t in turns],
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "n": sampling.n_samples,
            "max_tokens": sampling.max_tokens,
        }
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        try:
            resp = self.session.post(url, json=payload, headers=headers, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise TransientBackendError(f"connection failure: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint {endpoint.name!r} rejected credentials ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code != 200:
            raise MalformedResponseError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            texts = tuple(choice["message"]["content"] for choice in body["choices"])
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected response shape: {exc}") from exc
        if len(texts) != sampling.n_samples:
            raise MalformedResponseError(
                f"asked for {sampling.n_samples} choices, got {len(texts)}"
            )
        usage = body.get("usage") or {}
        if "prompt_tokens" in usage:
            reply_usage = Usage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            )
        else:
            reply_usage = estimate_usage(turns, texts)
        return BackendReply(texts=texts, usage=reply_usage)


class _RateLimiter:
    """Sliding-window requests-per-minute limiter."""

    def __init__(self, per_minute: int, clock: Callable[[], float], sleep: Callable[[float], None]):
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self._lock = threading.Lock()
        self._stamps: deque[float] = deque()

    def acquire(self) -> None:
        if self.per_minute <= 0:
            return
        while True:
            with self._lock:
                now = self.clock()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self.sleep(max(wait, 0.01))


RETRY_ATTEMPTS = 5
RETRY_BASE_S = 1.0
RETRY_FACTOR = 2.0
RETRY_CAP_S = 30.0


class Gateway:
    """Admission-controlled, retrying chat client shared by all workers."""

    def __init__(
        self,
        backend: Backend,
        ledger: CostLedger | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        rng: random.Random | None = None,
        max_attempts: int = RETRY_ATTEMPTS,
    ) -> None:
        self.backend = backend
        self.ledger = ledger if ledger is not None else CostLedger()
        self._sleep = sleep
        self._clock = clock
        self._rng = rng or random.Random()
        self.max_attempts = max_attempts
        self._lock = threading.Lock()
        self._semaphores: dict[str, threading.BoundedSemaphore] = {}
        self._limiters: dict[str, _RateLimiter] = {}

    def _admission(self, endpoint: EndpointConfig) -> tuple[threading.BoundedSemaphore, _RateLimiter]:
        with self._lock:
            if endpoint.name not in self._semaphores:
                self._semaphores[endpoint.name] = threading.BoundedSemaphore(endpoint.max_in_flight)
                self._limiters[endpoint.name] = _RateLimiter(
                    endpoint.requests_per_minute, self._clock, self._sleep
                )
            return self._semaphores[endpoint.name], self._limiters[endpoint.name]

    def chat(
        self, endpoint: EndpointConfig, turns: Sequence[ChatTurn], sampling: SamplingConfig
    ) -> list[str]:
        """Request completions; returns exactly ``sampling.n_samples`` texts."""
        if not turns:
            raise ValueError("turns must be non-empty")
        semaphore, limiter = self._admission(endpoint)
        with semaphore:
            last_error: GatewayError | None = None
            for attempt in range(self.max_attempts):
                limiter.acquire()
                try:
                    reply = self.backend.complete(endpoint, turns, sampling)
                except TransientBackendError as exc:
                    last_error = exc
                    delay = self._rng.uniform(
                        0.0, min(RETRY_BASE_S * (RETRY_FACTOR**attempt), RETRY_CAP_S)
                    )
                    log.warning(
                        "transient failure on %s (attempt %d/%d), backing off %.2fs: %s",
                        endpoint.name, attempt + 1, self.max_attempts, delay, exc,
                    )
                    self._sleep(delay)
                    continue
                self.ledger.record(endpoint, reply.usage)
                if len(reply.texts) != sampling.n_samples:
                    raise MalformedResponseError(
                        f"backend returned {len(reply.texts)} texts, wanted {sampling.n_samples}"
                    )
                return list(reply.texts)
            raise ExhaustedRetriesError(
                f"{self.max_attempts} attempts failed for {endpoint.name!r}: {last_error}"
            ) from last_error

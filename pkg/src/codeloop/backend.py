"""Text-generation backends: a chat-completion HTTP client and a scripted mock.

Both expose a single ``complete(request)`` call. The HTTP client retries
transport failures and 429/5xx replies with exponential backoff; the mock
replays scripted samples keyed by (request fingerprint, call ordinal) and is
what every test and desk-scale run uses.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol, Sequence, TypeVar

import httpx

from .errors import BackendError, ProtocolError, ScriptError
from .records import canonical_hash

log = logging.getLogger(__name__)

T = TypeVar("T")
U = TypeVar("U")

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 512
    n_samples: int = 1
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt is empty")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    @property
    def greedy(self) -> bool:
        return self.temperature == 0 and self.n_samples == 1

    def fingerprint(self) -> str:
        return canonical_hash({
            "prompt": self.prompt,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "n_samples": self.n_samples,
            "stop_sequences": list(self.stop_sequences),
        })


@dataclass(frozen=True)
class GenResponse:
    samples: tuple[str, ...]
    backend_id: str
    request_fingerprint: str
    attempts: int = 1


class Backend(Protocol):
    backend_id: str

    def complete(self, request: GenRequest) -> GenResponse: ...


class HttpBackend:
    """Chat-completion-style HTTP backend (OpenAI-compatible wire format)."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None,
                 max_attempts: int = 3, backoff_s: float = 1.0,
                 timeout_s: float = 120.0, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        headers = {}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(base_url=base_url, headers=headers,
                                    timeout=timeout_s, transport=transport)
        self._model = model
        self._max_attempts = max_attempts
        self._backoff_s = backoff_s
        self._sleep = sleep
        self.backend_id = f"http:{model}@{base_url}"

    def complete(self, request: GenRequest) -> GenResponse:
        body = {
            "model": self._model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "n": request.n_samples,
            "max_tokens": request.max_tokens,
        }
        if request.stop_sequences:
            body["stop"] = list(request.stop_sequences)

        delay = self._backoff_s
        last_error = "no attempt made"
        for attempt in range(1, self._max_attempts + 1):
            try:
                response = self._client.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
            else:
                if response.status_code == 200:
                    samples = self._parse_choices(response, request.n_samples)
                    return GenResponse(samples, self.backend_id,
                                       request.fingerprint(), attempts=attempt)
                if response.status_code not in RETRYABLE_STATUSES:
                    raise BackendError(
                        f"backend returned status {response.status_code}",
                        attempts=attempt)
                last_error = f"status {response.status_code}"
            if attempt < self._max_attempts:
                log.warning("backend attempt %d failed (%s), retrying in %.1fs",
                            attempt, last_error, delay)
                self._sleep(delay)
                delay *= 2
        raise BackendError(f"backend failed after {self._max_attempts} attempts: {last_error}",
                           attempts=self._max_attempts)

    @staticmethod
    def _parse_choices(response: httpx.Response, n_samples: int) -> tuple[str, ...]:
        try:
            payload = response.json()
            choices = payload["choices"]
            ordered = sorted(choices, key=lambda c: c.get("index", 0))
            samples = tuple(str(c["message"]["content"]) for c in ordered)
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed backend reply: {exc!r}") from exc
        if len(samples) != n_samples:
            raise ProtocolError(
                f"backend returned {len(samples)} samples, expected {n_samples}")
        return samples

    def close(self):
        self._client.close()


@dataclass
class MockBackend:
    """Deterministic scripted backend.

    ``entries`` maps (request fingerprint, call ordinal) to the list of
    samples to return; the ordinal counts how many times that fingerprint has
    been requested so far. Unmatched requests fall back to ``fallback`` when
    set, otherwise raise a scripting error naming the fingerprint.
    """

    entries: dict[tuple[str, int], list[str]] = field(default_factory=dict)
    fallback: str | None = None
    backend_id: str = "mock"

    def __post_init__(self):
        self._counters: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(self, request: GenRequest) -> GenResponse:
        fp = request.fingerprint()
        with self._lock:
            ordinal = self._counters.get(fp, 0)
            self._counters[fp] = ordinal + 1
        key = (fp, ordinal)
        if key in self.entries:
            samples = self.entries[key]
            if len(samples) != request.n_samples:
                raise ScriptError(
                    f"entry for fingerprint {fp} ordinal {ordinal} has "
                    f"{len(samples)} samples, request wants {request.n_samples}")
        elif self.fallback is not None:
            samples = [self.fallback] * request.n_samples
        else:
            raise ScriptError(
                f"no scripted entry for fingerprint {fp} ordinal {ordinal} "
                f"(prompt starts {request.prompt[:60]!r})")
        return GenResponse(tuple(samples), self.backend_id, fp)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        """Load a script: {"entries": [{"fingerprint", "ordinal", "samples"}], "fallback"}."""
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        entries = {
            (e["fingerprint"], int(e.get("ordinal", 0))): list(e["samples"])
            for e in data.get("entries", [])
        }
        return cls(entries=entries, fallback=data.get("fallback"))


def mock_script(entries: dict[tuple[str, int], list[str]],
                fallback: str | None = None) -> MockBackend:
    """Build a scripted mock backend from explicit replay entries."""
    return MockBackend(entries=dict(entries), fallback=fallback)


def run_bounded(fn: Callable[[T], U], items: Sequence[T], max_concurrency: int) -> list[U]:
    """Apply fn over items with a bounded worker pool, preserving item order."""
    if max_concurrency < 1:
        raise ValueError("max_concurrency must be >= 1")
    if not items:
        return []
    if max_concurrency == 1 or len(items) == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        return list(pool.map(fn, items))

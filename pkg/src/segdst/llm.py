"""Text generation backends: HTTP chat completions, record/replay cache, scripted mock."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import tempfile
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

log = logging.getLogger(__name__)

API_KEY_ENV = "SEGDST_API_KEY"
RETRY_STATUS = frozenset({429, 500, 502, 503, 504})


class BackendError(RuntimeError):
    pass


class ReplayMissError(BackendError):
    def __init__(self, key: str):
        super().__init__(f"no cached generation for key {key}")
        self.key = key


class MockExhaustedError(BackendError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    model: str = "gpt-4"
    temperature: float = 0.0
    max_output_tokens: int = 1500

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


def cache_key(prompt: str, params: GenerationParams) -> str:
    blob = json.dumps(
        {"model": params.model, "temperature": params.temperature,
         "max_output_tokens": params.max_output_tokens, "prompt": prompt},
        sort_keys=True, ensure_ascii=False, separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationRecord:
    key: str
    model: str
    temperature: float
    max_output_tokens: int
    prompt: str
    response: str
    timestamp: float
    latency: float


class Backend(Protocol):
    def complete(self, prompt: str, params: GenerationParams) -> str: ...


class HttpBackend:
    """POSTs ``{model, messages, temperature, max_tokens}`` to a chat-completion endpoint.

    Timeouts, 429 and 5xx responses are retried with exponential backoff and
    jitter, up to ``max_attempts`` tries in total.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, *, timeout: float = 120.0,
                 max_attempts: int = 5, backoff: float = 1.0, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.client = client or httpx.Client(timeout=timeout)
        self.sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, prompt: str, params: GenerationParams) -> str:
        body = {
            "model": params.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        }
        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            try:
                response = self.client.post(self.endpoint, json=body, headers=self._headers())
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
            except httpx.TransportError as exc:
                raise BackendError(f"request to {self.endpoint} failed: {exc}") from exc
            else:
                if response.status_code == 200:
                    try:
                        return response.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise BackendError(f"unexpected response body: {response.text[:200]}") from exc
                if response.status_code not in RETRY_STATUS:
                    raise BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
                last_error = f"HTTP {response.status_code}"
            if attempt + 1 < self.max_attempts:
                delay = self.backoff * 2 ** attempt + random.uniform(0, self.backoff)
                log.warning("attempt %d failed (%s); retrying in %.1fs", attempt + 1, last_error, delay)
                self.sleep(delay)
        raise BackendError(f"giving up after {self.max_attempts} attempts: {last_error}")


class ReplayBackend:
    """Serves generations from a cache directory, one ``<key>.json`` per record.

    Without ``inner`` (strict replay) a miss raises :class:`ReplayMissError`.
    With ``inner`` a miss is generated by it and stored.
    """

    def __init__(self, cache_dir: str | Path, inner: Backend | None = None):
        self.cache_dir = Path(cache_dir)
        self.inner = inner
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def lookup(self, prompt: str, params: GenerationParams) -> GenerationRecord | None:
        path = self.path(cache_key(prompt, params))
        if not path.exists():
            return None
        return GenerationRecord(**json.loads(path.read_text(encoding="utf-8")))

    def complete(self, prompt: str, params: GenerationParams) -> str:
        key = cache_key(prompt, params)
        cached = self.lookup(prompt, params)
        if cached is not None:
            return cached.response
        if self.inner is None:
            raise ReplayMissError(key)
        start = time.monotonic()
        response = self.inner.complete(prompt, params)
        record = GenerationRecord(key, params.model, params.temperature, params.max_output_tokens,
                                  prompt, response, time.time(), time.monotonic() - start)
        self._write(record)
        return response

    def _write(self, record: GenerationRecord) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(asdict(record), fh, ensure_ascii=False, indent=1, sort_keys=True)
            os.replace(tmp, self.path(record.key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


class MockBackend:
    """Scripted backend for offline runs.

    ``responses`` is a list consumed in call order, a mapping from prompt text
    to response, or a callable on the prompt. ``max_in_flight`` records the
    highest number of overlapping calls seen.
    """

    def __init__(self, responses: Sequence[str] | Mapping[str, str] | Callable[[str], str],
                 delay: float = 0.0):
        self.responses = responses
        self.delay = delay
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self._next = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str, params: GenerationParams) -> str:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            return self._respond(prompt)
        finally:
            with self._lock:
                self.in_flight -= 1

    def _respond(self, prompt: str) -> str:
        if callable(self.responses):
            return self.responses(prompt)
        if isinstance(self.responses, Mapping):
            if prompt not in self.responses:
                raise BackendError("mock has no response for this prompt")
            return self.responses[prompt]
        with self._lock:
            if self._next >= len(self.responses):
                raise MockExhaustedError(f"mock script exhausted after {len(self.responses)} responses")
            out = self.responses[self._next]
            self._next += 1
        return out


@dataclass(frozen=True)
class CacheStats:
    records: int = 0
    bytes: int = 0
    models: int = 0
    corrupt: int = 0


def cache_stats(cache_dir: str | Path) -> CacheStats:
    root = Path(cache_dir)
    if not root.is_dir():
        raise BackendError(f"{root} is not a readable directory")
    records = size = corrupt = 0
    models = set()
    for path in sorted(root.glob("*.json")):
        if path.name.startswith(".tmp-"):
            continue
        size += path.stat().st_size
        try:
            rec = GenerationRecord(**json.loads(path.read_text(encoding="utf-8")))
        except (ValueError, TypeError):
            corrupt += 1
            continue
        if rec.key != path.stem:
            corrupt += 1
            continue
        records += 1
        models.add(rec.model)
    return CacheStats(records, size, len(models), corrupt)

"""Completion backends: live HTTP client, fixture replay, and an on-disk response cache.

Cache entries and replay fixtures share one layout: ``<dir>/<digest>.json``
holding the canonical request and the response verbatim. A cache directory
filled by a live run can therefore be replayed directly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
import warnings
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

import httpx

from .errors import AuthMissing, BackendError, BackendUnavailable, CacheCorrupt, FixtureMiss

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "text-davinci-003"
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 512
DEFAULT_TIMEOUT = 60.0
DEFAULT_API_KEY_ENV = "LAWPROMPT_API_KEY"

SOURCES = ("live", "cache", "replay")


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop: tuple[str, ...] | None = None
    # not sent over the wire; keys the cache so template edits never hit stale entries
    template_version: str = ""

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt is empty")
        temperature = float(self.temperature)
        if not 0.0 <= temperature <= 2.0:
            raise ValueError(f"temperature {temperature} outside [0, 2]")
        object.__setattr__(self, "temperature", temperature)
        if isinstance(self.max_tokens, bool) or not isinstance(self.max_tokens, int) or self.max_tokens < 1:
            raise ValueError("max_tokens must be a positive int")
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))

    def canonical(self) -> dict[str, Any]:
        # fixed field order; the digest depends on it
        return {
            "model": self.model,
            "prompt": self.prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stop": list(self.stop) if self.stop is not None else None,
            "template_version": self.template_version,
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.canonical(), ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0
    source: str = "live"
    finish_reason: str | None = None

    def __post_init__(self):
        if min(self.prompt_tokens, self.completion_tokens, self.latency_ms) < 0:
            raise ValueError("token counts and latency must be non-negative")
        if self.source not in SOURCES:
            raise ValueError(f"unknown response source {self.source!r}")

    @property
    def truncated(self) -> bool:
        return self.finish_reason == "length"


class CompletionBackend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


class UsageLedger:
    """Thread-safe running totals of tokens, calls by source and errors."""

    def __init__(self):
        self._lock = threading.Lock()
        self.prompt_tokens: Counter[str] = Counter()
        self.completion_tokens: Counter[str] = Counter()
        self.calls: Counter[str] = Counter()
        self.errors: Counter[str] = Counter()
        self.restored = 0

    def record(self, model: str, response: CompletionResponse) -> None:
        with self._lock:
            self.prompt_tokens[model] += response.prompt_tokens
            self.completion_tokens[model] += response.completion_tokens
            self.calls[response.source] += 1

    def restore(self, model: str, prompt_tokens: int, completion_tokens: int) -> None:
        """Count tokens of a result carried over from an earlier, interrupted run."""
        with self._lock:
            self.prompt_tokens[model] += prompt_tokens
            self.completion_tokens[model] += completion_tokens
            self.restored += 1

    def record_error(self, kind: str) -> None:
        with self._lock:
            self.errors[kind] += 1

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            models = sorted(set(self.prompt_tokens) | set(self.completion_tokens))
            return {
                "tokens": {
                    m: {"prompt": self.prompt_tokens[m], "completion": self.completion_tokens[m]} for m in models
                },
                "calls": {s: self.calls[s] for s in SOURCES},
                "restored": self.restored,
                "errors": dict(sorted(self.errors.items())),
            }


def _write_entry(directory: Path, request: CompletionRequest, response: CompletionResponse) -> Path:
    """Atomically write one digest-named entry; concurrent writers of a key converge."""
    directory.mkdir(parents=True, exist_ok=True)
    payload = {"request": request.canonical(), "response": asdict(response)}
    data = json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=True) + "\n"
    target = directory / f"{request.digest}.json"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return target


def _read_entry(path: Path, request: CompletionRequest) -> CompletionResponse:
    """Parse an entry; ValueError if it is unreadable or belongs to another request."""
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        if payload["request"] != request.canonical():
            raise ValueError("stored request does not match")
        resp = payload["response"]
        return CompletionResponse(
            text=resp["text"],
            prompt_tokens=int(resp.get("prompt_tokens", 0)),
            completion_tokens=int(resp.get("completion_tokens", 0)),
            latency_ms=int(resp.get("latency_ms", 0)),
            source=resp.get("source", "live"),
            finish_reason=resp.get("finish_reason"),
        )
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(str(exc)) from exc


class ReplayBackend:
    """Answers only from a fixture store; never touches the network."""

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)
        self.calls = 0

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        path = self.fixture_dir / f"{request.digest}.json"
        if not path.is_file():
            raise FixtureMiss(request.digest)
        try:
            stored = _read_entry(path, request)
        except ValueError as exc:
            raise BackendError(f"unreadable fixture {path.name}: {exc}") from exc
        self.calls += 1
        return CompletionResponse(
            text=stored.text,
            prompt_tokens=stored.prompt_tokens,
            completion_tokens=stored.completion_tokens,
            latency_ms=stored.latency_ms,
            source="replay",
            finish_reason=stored.finish_reason,
        )


def record_fixtures(
    pairs: Iterable[tuple[CompletionRequest, CompletionResponse]], fixture_dir: str | Path
) -> list[Path]:
    """Write one fixture per request digest so the run can later be replayed."""
    fixture_dir = Path(fixture_dir)
    fixture_dir.mkdir(parents=True, exist_ok=True)
    return [_write_entry(fixture_dir, req, resp) for req, resp in pairs]


class ResponseCache:
    """Directory of digest-named entries."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.hits = 0
        self.misses = 0
        self.corrupt = 0
        self._lock = threading.Lock()

    def get(self, request: CompletionRequest) -> CompletionResponse | None:
        path = self.directory / f"{request.digest}.json"
        if not path.is_file():
            with self._lock:
                self.misses += 1
            return None
        try:
            resp = _read_entry(path, request)
        except ValueError as exc:
            with self._lock:
                self.corrupt += 1
                self.misses += 1
            warnings.warn(f"cache entry {request.digest} is corrupt ({exc}); refetching", CacheCorrupt, stacklevel=2)
            return None
        with self._lock:
            self.hits += 1
        return resp

    def put(self, request: CompletionRequest, response: CompletionResponse) -> None:
        _write_entry(self.directory, request, response)


def cached_complete(
    request: CompletionRequest, cache: ResponseCache, inner: CompletionBackend
) -> CompletionResponse:
    """Serve from cache when possible, otherwise delegate to ``inner`` and store."""
    hit = cache.get(request)
    if hit is not None:
        return CompletionResponse(
            text=hit.text,
            prompt_tokens=hit.prompt_tokens,
            completion_tokens=hit.completion_tokens,
            latency_ms=hit.latency_ms,
            source="cache",
            finish_reason=hit.finish_reason,
        )
    response = inner.complete(request)
    cache.put(request, response)
    return response


class CachedBackend:
    def __init__(self, inner: CompletionBackend, cache: ResponseCache | str | Path):
        self.inner = inner
        self.cache = cache if isinstance(cache, ResponseCache) else ResponseCache(cache)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        return cached_complete(request, self.cache, self.inner)


class HTTPCompletionBackend:
    """Client for a prompt-in/text-out ``POST {base_url}/completions`` endpoint.

    Request body: ``{model, prompt, temperature, max_tokens, stop}``. The
    response is read as ``choices[0].text`` / ``choices[0].finish_reason`` and
    ``usage.prompt_tokens`` / ``usage.completion_tokens``. HTTP 429, 5xx,
    timeouts and transport errors are retried with capped exponential backoff.
    """

    RETRY_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str,
        *,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = DEFAULT_TIMEOUT,
        max_retries: int = 5,
        backoff_base: float = 1.0,
        backoff_cap: float = 30.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._lock = threading.Lock()
        self.retries = 0
        self.calls = 0

    def close(self) -> None:
        self._client.close()

    def _backoff(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_base * (2**attempt))

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise AuthMissing(f"environment variable {self.api_key_env} is not set")
        body: dict[str, Any] = {
            "model": request.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop:
            body["stop"] = list(request.stop)
        headers = {"Authorization": f"Bearer {api_key}"}

        last_error = ""
        for attempt in range(self.max_retries + 1):
            if attempt:
                with self._lock:
                    self.retries += 1
                self._sleep(self._backoff(attempt - 1))
            start = time.monotonic()
            try:
                resp = self._client.post(f"{self.base_url}/completions", json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
                continue
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                continue
            latency_ms = int((time.monotonic() - start) * 1000)
            if resp.status_code in self.RETRY_STATUS:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("completion request got %s, retrying", resp.status_code)
                continue
            if resp.status_code in (401, 403):
                raise AuthMissing(f"HTTP {resp.status_code} from {self.base_url}")
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            with self._lock:
                self.calls += 1
            return _parse_completion(resp.json(), latency_ms)
        raise BackendUnavailable(f"gave up after {self.max_retries} retries ({last_error})")


def _parse_completion(payload: Any, latency_ms: int) -> CompletionResponse:
    try:
        choice = payload["choices"][0]
        usage = payload.get("usage") or {}
        return CompletionResponse(
            text=choice["text"],
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency_ms=latency_ms,
            source="live",
            finish_reason=choice.get("finish_reason"),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise BackendError(f"unexpected completion payload: {exc}") from exc

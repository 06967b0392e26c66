"""Chat-completion gateway: live HTTP backend, scriptable mock, disk cache.

Cache entries live at ``<cache_dir>/<first-2-hex>/<digest>.json`` and are
written atomically (temp file + rename), so concurrent writers cannot corrupt
an entry and warm-cache runs make zero network calls.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .errors import (
    AuthError,
    EmptyCompletion,
    RateLimited,
    TransportError,
    UnscriptedRequest,
)
from .prompts import Message, PromptMessages

DEFAULT_MODEL_ID = "gpt-3.5-turbo-16k-0613"
BASE_URL_ENV = "SUMREC_LLM_BASE_URL"
API_KEY_ENV = "SUMREC_LLM_API_KEY"


@dataclass(frozen=True)
class CompletionRequest:
    messages: PromptMessages
    model_id: str = DEFAULT_MODEL_ID
    temperature: float = 0.0
    max_output_units: int = 512


@dataclass(frozen=True)
class CompletionResult:
    text: str
    cached: bool
    latency: float
    attempts: int = 1
    provider_usage: Optional[dict] = None


def cache_key(request: CompletionRequest) -> str:
    """Stable content digest of (model, temperature, messages); order-significant."""
    canonical = json.dumps(
        {
            "model": request.model_id,
            "temperature": repr(float(request.temperature)),
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages.messages
            ],
        },
        ensure_ascii=False,
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class CompletionCache:
    def __init__(self, cache_dir: str | Path):
        self.root = Path(cache_dir)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[str]:
        path = self._path(key)
        if not path.is_file():
            return None
        with open(path, encoding="utf-8") as f:
            return json.load(f)["text"]

    def put(self, key: str, text: str) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(
            {"key": key, "text": text, "created_at": time.time()}, ensure_ascii=False
        )
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


class MockBackend:
    """Returns canned text per matcher; immutable after construction.

    Script entries: (matcher, text) where matcher is an exact cache-key digest,
    a substring of the prompt text, or a callable(request) -> bool. Entries may
    also be callables returning the response text, to script failures.
    """

    def __init__(self, script: Sequence[tuple] | dict):
        items = script.items() if isinstance(script, dict) else script
        self._script = tuple(items)
        self.calls = 0

    def call(self, request: CompletionRequest) -> str:
        self.calls += 1
        key = cache_key(request)
        text = request.messages.text
        for matcher, response in self._script:
            hit = (
                matcher(request)
                if callable(matcher)
                else matcher == key or matcher in text
            )
            if hit:
                return response(request) if callable(response) else response
        raise UnscriptedRequest(f"no script entry matches request {key[:12]}")


class LiveBackend:
    """HTTP chat-completions backend with exponential-backoff retries."""

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        timeout: float = 120.0,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        if not self.base_url:
            raise AuthError(f"no base URL configured (set {BASE_URL_ENV})")
        if not self.api_key:
            raise AuthError(f"no API key configured (set {API_KEY_ENV})")
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.session = session or requests.Session()
        self.calls = 0

    def call(self, request: CompletionRequest) -> str:
        body = {
            "model": request.model_id,
            "temperature": request.temperature,
            "max_tokens": request.max_output_units,
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages.messages
            ],
        }
        last_error: Optional[Exception] = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            self.calls += 1
            try:
                resp = self.session.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers={"Authorization": f"Bearer {self.api_key}"},
                    timeout=self.timeout,
                )
            except requests.RequestException as e:
                last_error = TransportError(str(e))
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"backend returned {resp.status_code}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = RateLimited(f"backend returned {resp.status_code}")
                continue
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError) as e:
                raise TransportError(f"malformed response body: {e}")
            if not text:
                raise EmptyCompletion("backend returned an empty completion")
            return text
        if isinstance(last_error, RateLimited):
            raise last_error
        raise last_error or TransportError("exhausted retries")


class Gateway:
    """Shared front door: cache lookup, bounded-concurrency backend calls."""

    def __init__(
        self,
        backend,
        cache_dir: Optional[str | Path] = None,
        use_cache: bool = True,
        max_in_flight: int = 4,
        max_attempts: int = 3,
    ):
        self.backend = backend
        self.cache = CompletionCache(cache_dir) if cache_dir and use_cache else None
        self._sem = threading.Semaphore(max_in_flight)
        self.max_attempts = max_attempts
        self._lock = threading.Lock()
        self.backend_calls = 0
        self.cache_hits = 0

    def complete(self, request: CompletionRequest) -> CompletionResult:
        start = time.monotonic()
        key = cache_key(request)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                with self._lock:
                    self.cache_hits += 1
                return CompletionResult(
                    text=cached, cached=True, latency=time.monotonic() - start
                )

        attempts = 0
        last_error: Optional[Exception] = None
        with self._sem:
            # mock backends may script transient failures; live backends retry internally
            for attempt in range(self.max_attempts):
                attempts += 1
                with self._lock:
                    self.backend_calls += 1
                try:
                    text = self.backend.call(request)
                    break
                except (RateLimited, TransportError) as e:
                    last_error = e
            else:
                raise last_error
        if not text:
            raise EmptyCompletion("backend returned an empty completion")
        if self.cache is not None:
            self.cache.put(key, text)
        return CompletionResult(
            text=text, cached=False, latency=time.monotonic() - start, attempts=attempts
        )

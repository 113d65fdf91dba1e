"""Generation backends: an OpenAI-compatible HTTP client and a replay stub.

Replay scripts are JSONL files of ``{"key"?, "response", "finish_reason"}``
objects.  With keys present the backend serves each request by looking up a
hash of its normalized prompt, which keeps multi-threaded runs deterministic;
without keys it plays responses back in order.  A recording wrapper captures
live traffic in the same format so any run can be replayed later.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import requests

logger = logging.getLogger(__name__)

FINISH_REASONS = ("stop", "length", "error")


class BackendUnavailable(RuntimeError):
    """The HTTP endpoint kept failing after all retry attempts."""


class ScriptExhausted(RuntimeError):
    """The replay script has no response left for this request."""


class ScriptMismatch(RuntimeError):
    """The request does not match any key in the replay script."""


class IoFailure(OSError):
    """Reading or writing a script file failed."""


@dataclass(frozen=True)
class GenerationRequest:
    messages: Tuple[Dict[str, str], ...]
    max_new_tokens: int = 1024
    temperature: float = 0.0
    stop: Optional[Tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        object.__setattr__(self, "messages", tuple(dict(m) for m in self.messages))
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))

    @classmethod
    def single_user(
        cls,
        content: str,
        max_new_tokens: int = 1024,
        temperature: float = 0.0,
        stop: Optional[Sequence[str]] = None,
    ) -> "GenerationRequest":
        return cls(
            messages=({"role": "user", "content": content},),
            max_new_tokens=max_new_tokens,
            temperature=temperature,
            stop=tuple(stop) if stop is not None else None,
        )


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finish_reason: str = "stop"

    def __post_init__(self) -> None:
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError("finish_reason must be one of %s" % (FINISH_REASONS,))
        if not self.text and self.finish_reason != "error":
            raise ValueError("empty text requires finish_reason 'error'")


class CallCounter:
    """Thread-safe count of completed generation calls, per tag and total."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.total = 0
        self.per_tag: Dict[str, int] = {}

    def record(self, tag: Optional[str] = None) -> None:
        with self._lock:
            self.total += 1
            key = tag if tag is not None else ""
            self.per_tag[key] = self.per_tag.get(key, 0) + 1

    def tag_total(self) -> int:
        with self._lock:
            return sum(self.per_tag.values())


def request_key(messages: Sequence[Dict[str, str]]) -> str:
    """Stable hash of a request's messages, insensitive to whitespace runs."""
    canonical = "\n".join(
        "%s: %s" % (m.get("role", ""), m.get("content", "")) for m in messages
    )
    collapsed = " ".join(canonical.split())
    return hashlib.sha256(collapsed.encode("utf-8")).hexdigest()


class Backend:
    """Base class wiring the shared call counter."""

    def __init__(self) -> None:
        self.counter = CallCounter()

    def generate(
        self, request: GenerationRequest, tag: Optional[str] = None
    ) -> GenerationResult:
        raise NotImplementedError


@dataclass(frozen=True)
class ScriptEntry:
    response: str
    finish_reason: str = "stop"
    key: Optional[str] = None


def load_script(path: str) -> List[ScriptEntry]:
    entries: List[ScriptEntry] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                data = json.loads(line)
                entries.append(
                    ScriptEntry(
                        response=data["response"],
                        finish_reason=data.get("finish_reason", "stop"),
                        key=data.get("key"),
                    )
                )
    except OSError as exc:
        raise IoFailure("cannot read script %s: %s" % (path, exc))
    except (KeyError, ValueError) as exc:
        raise ValueError("bad script line in %s: %s" % (path, exc))
    return entries


def write_script(entries: Sequence[ScriptEntry], path: str) -> None:
    if not entries:
        raise ValueError("refusing to write an empty replay script")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in entries:
                record: Dict[str, object] = {}
                if entry.key is not None:
                    record["key"] = entry.key
                record["response"] = entry.response
                record["finish_reason"] = entry.finish_reason
                fh.write(json.dumps(record, ensure_ascii=False))
                fh.write("\n")
    except OSError as exc:
        raise IoFailure("cannot write script %s: %s" % (path, exc))


class ReplayBackend(Backend):
    """Serve generations from a recorded script instead of a live model.

    Keyed scripts (every entry carries a ``key``) are matched by prompt hash
    and are safe under concurrency; unkeyed scripts play back strictly in
    order and should be used with a single worker.
    """

    def __init__(self, entries: Sequence[ScriptEntry]) -> None:
        super().__init__()
        self._lock = threading.Lock()
        self.keyed = bool(entries) and all(e.key is not None for e in entries)
        self._queue: Deque[ScriptEntry] = deque(entries)
        self._by_key: Dict[str, Deque[ScriptEntry]] = {}
        if self.keyed:
            for entry in entries:
                self._by_key.setdefault(entry.key, deque()).append(entry)

    @classmethod
    def from_script(cls, path: str) -> "ReplayBackend":
        return cls(load_script(path))

    @classmethod
    def from_texts(cls, texts: Sequence[str]) -> "ReplayBackend":
        return cls([ScriptEntry(response=t) for t in texts])

    def generate(
        self, request: GenerationRequest, tag: Optional[str] = None
    ) -> GenerationResult:
        with self._lock:
            if self.keyed:
                key = request_key(request.messages)
                queue = self._by_key.get(key)
                if queue is None:
                    raise ScriptMismatch("no scripted response for key %s" % key[:12])
                if not queue:
                    raise ScriptExhausted("scripted responses for key %s used up" % key[:12])
                entry = queue.popleft()
            else:
                if not self._queue:
                    raise ScriptExhausted("replay script has no responses left")
                entry = self._queue.popleft()
        result = GenerationResult(text=entry.response, finish_reason=entry.finish_reason)
        self.counter.record(tag)
        return result


class RecordingBackend(Backend):
    """Wrap another backend and capture its traffic as a replay script."""

    def __init__(self, inner: Backend) -> None:
        super().__init__()
        self.inner = inner
        self._lock = threading.Lock()
        self._entries: List[ScriptEntry] = []

    def generate(
        self, request: GenerationRequest, tag: Optional[str] = None
    ) -> GenerationResult:
        result = self.inner.generate(request, tag=tag)
        entry = ScriptEntry(
            response=result.text,
            finish_reason=result.finish_reason,
            key=request_key(request.messages),
        )
        with self._lock:
            self._entries.append(entry)
        self.counter.record(tag)
        return result

    @property
    def entries(self) -> List[ScriptEntry]:
        with self._lock:
            return list(self._entries)

    def write_script(self, path: str) -> None:
        with self._lock:
            if not self._entries:
                raise ValueError("no calls recorded; refusing to write empty script")
            entries = list(self._entries)
        write_script(entries, path)


def record_session(backend: Backend) -> RecordingBackend:
    """Convenience wrapper: returns a recording proxy around ``backend``."""
    return RecordingBackend(backend)


@dataclass
class HttpConfig:
    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    max_attempts: int = 3
    backoff_base: float = 1.0
    timeout: float = 120.0


class HttpBackend(Backend):
    """OpenAI-compatible chat-completions client with retry and backoff.

    The bearer token is read from the environment variable named by
    ``config.api_key_env`` at call time; transient failures (connection
    errors, HTTP 5xx, and 429) are retried with exponential backoff up to
    ``max_attempts`` before :class:`BackendUnavailable` is raised.
    """

    def __init__(self, config: HttpConfig, session: Optional[requests.Session] = None) -> None:
        super().__init__()
        self.config = config
        self.session = session or requests.Session()

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.api_key_env, "")
        if token:
            headers["Authorization"] = "Bearer %s" % token
        return headers

    def generate(
        self, request: GenerationRequest, tag: Optional[str] = None
    ) -> GenerationResult:
        payload: Dict[str, object] = {
            "model": self.config.model,
            "messages": list(request.messages),
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        if request.stop:
            payload["stop"] = list(request.stop)
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last_error = "no attempts made"
        for attempt in range(self.config.max_attempts):
            if attempt:
                time.sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            try:
                response = self.session.post(
                    url, json=payload, headers=self._headers(), timeout=self.config.timeout
                )
            except requests.RequestException as exc:
                last_error = "request failed: %s" % exc
                logger.warning("attempt %d/%d %s", attempt + 1, self.config.max_attempts, last_error)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = "HTTP %d" % response.status_code
                logger.warning("attempt %d/%d %s", attempt + 1, self.config.max_attempts, last_error)
                continue
            if response.status_code != 200:
                raise BackendUnavailable(
                    "endpoint rejected request: HTTP %d %s"
                    % (response.status_code, response.text[:200])
                )
            try:
                body = response.json()
                choice = body["choices"][0]
                text = choice["message"]["content"] or ""
                finish = choice.get("finish_reason", "stop")
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendUnavailable("malformed completion payload: %s" % exc)
            if finish not in FINISH_REASONS:
                finish = "stop"
            if not text:
                finish = "error"
            result = GenerationResult(text=text, finish_reason=finish)
            self.counter.record(tag)
            return result
        raise BackendUnavailable(
            "gave up after %d attempts (%s)" % (self.config.max_attempts, last_error)
        )

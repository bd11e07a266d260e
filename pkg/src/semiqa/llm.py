"""Chat-completion backends: remote OpenAI-compatible, scripted, and record/replay."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Pattern, Protocol, Sequence, Union

import httpx

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class BackendError(RuntimeError):
    """A backend call failed and will not be retried."""

    def __init__(self, message: str, *, attempts: int = 1, status: int | None = None, retryable: bool = False):
        super().__init__(message)
        self.attempts = attempts
        self.status = status
        self.retryable = retryable


class CassetteMiss(BackendError):
    def __init__(self, request_hash: str):
        super().__init__(f"cassette miss for request {request_hash}")
        self.request_hash = request_hash


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    system: str = ""
    temperature: float = 0.0
    max_tokens: int = 512
    model: str = "default"

    def __post_init__(self):
        if not self.messages:
            raise ValueError("ChatRequest needs at least one message")
        for role, _ in self.messages:
            if role not in ("user", "assistant"):
                raise ValueError(f"bad role {role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @classmethod
    def user(cls, prompt: str, **kw) -> "ChatRequest":
        return cls(messages=(("user", prompt),), **kw)

    @property
    def rendered(self) -> str:
        """Flat text view used for scripted rule matching."""
        parts = [self.system] if self.system else []
        parts.extend(content for _, content in self.messages)
        return "\n".join(parts)

    def request_hash(self) -> str:
        # max_tokens deliberately excluded
        payload = {
            "system": self.system,
            "messages": [list(m) for m in self.messages],
            "model": self.model,
            "temperature": self.temperature,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class Backend(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


def complete(backend: Backend, req: ChatRequest) -> str:
    return backend.complete(req)


Matcher = Union[str, Pattern[str], Callable[[str], bool]]


class ScriptedBackend:
    """Replies from an ordered rule list; the first rule matching the prompt wins.

    A rule matcher is a substring, a compiled regex (searched), or a predicate.
    A response may be a callable taking the rendered prompt.
    """

    def __init__(self, rules: Sequence[tuple[Matcher, Union[str, Callable[[str], str]]]] = (), default_response: str = ""):
        self.rules = list(rules)
        self.default_response = default_response
        self.calls = 0
        self._lock = threading.Lock()

    @staticmethod
    def _matches(matcher: Matcher, text: str) -> bool:
        if isinstance(matcher, str):
            return matcher in text
        if isinstance(matcher, re.Pattern):
            return matcher.search(text) is not None
        return bool(matcher(text))

    def complete(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
        text = req.rendered
        for matcher, response in self.rules:
            if self._matches(matcher, text):
                return response(text) if callable(response) else response
        return self.default_response

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ScriptedBackend":
        """Load ``{"rules": [{"match"|"pattern": ..., "response": ...}], "default": ...}``."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rules: list = []
        for r in data.get("rules", []):
            matcher = re.compile(r["pattern"]) if "pattern" in r else r["match"]
            rules.append((matcher, r["response"]))
        return cls(rules, data.get("default", ""))


@dataclass
class RetryPolicy:
    attempts: int = 3
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    timeout: float = 30.0
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def delay(self, attempt: int) -> float:
        return self.backoff_base * self.backoff_factor ** attempt


def endpoint_url(base: str, resource: str) -> str:
    base = base.rstrip("/")
    if not base.endswith("/v1"):
        base += "/v1"
    return f"{base}/{resource}"


def call_with_retry(client: httpx.Client, url: str, payload: dict, policy: RetryPolicy) -> dict:
    """POST ``payload`` as JSON, retrying transport errors and retryable statuses."""
    last: str = ""
    for attempt in range(policy.attempts):
        try:
            resp = client.post(url, json=payload, timeout=policy.timeout)
        except httpx.TransportError as exc:
            last = f"{type(exc).__name__}: {exc}"
        else:
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError:
                    raise BackendError(f"non-JSON response: {resp.text[:200]}", attempts=attempt + 1) from None
            if resp.status_code not in RETRYABLE_STATUS:
                raise BackendError(
                    f"HTTP {resp.status_code}: {resp.text[:200]}", attempts=attempt + 1, status=resp.status_code
                )
            last = f"HTTP {resp.status_code}: {resp.text[:200]}"
        if attempt + 1 < policy.attempts:
            delay = policy.delay(attempt)
            log.warning("retrying %s in %.1fs after %s", url, delay, last)
            policy.sleep(delay)
    raise BackendError(
        f"gave up after {policy.attempts} attempts: {last}", attempts=policy.attempts, retryable=True
    )


class RemoteBackend:
    """OpenAI-compatible ``/v1/chat/completions`` client.

    Endpoint and key default to ``SEMIQA_API_BASE`` and ``SEMIQA_API_KEY``.
    In-flight requests are bounded by ``max_in_flight``.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        retry: RetryPolicy | None = None,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url or os.environ.get("SEMIQA_API_BASE", "")
        if not self.base_url:
            raise BackendError("no chat endpoint configured (SEMIQA_API_BASE)")
        key = api_key if api_key is not None else os.environ.get("SEMIQA_API_KEY", "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self.retry = retry or RetryPolicy()
        self._client = httpx.Client(headers=headers, timeout=self.retry.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.last_usage: dict | None = None

    def complete(self, req: ChatRequest) -> str:
        messages = [{"role": "system", "content": req.system}] if req.system else []
        messages += [{"role": role, "content": content} for role, content in req.messages]
        payload = {
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        with self._slots:
            body = call_with_retry(self._client, endpoint_url(self.base_url, "chat/completions"), payload, self.retry)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendError(f"malformed completion response: {str(body)[:200]}") from None
        self.last_usage = body.get("usage")
        return text or ""

    def close(self) -> None:
        self._client.close()


Mode = Literal["record", "replay"]


class RecordReplayBackend:
    """Persists request-hash -> response pairs and replays them byte-identically."""

    def __init__(self, cassette_path: str | os.PathLike, inner: Backend | None = None, mode: Mode = "replay"):
        if mode not in ("record", "replay"):
            raise ValueError(f"unknown cassette mode {mode!r}")
        if mode == "record" and inner is None:
            raise ValueError("record mode needs an inner backend")
        self.path = Path(cassette_path)
        self.inner = inner
        self.mode = mode
        self._lock = threading.Lock()
        self._tape: dict[str, str] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._tape[rec["request_hash"]] = rec["response"]
        elif mode == "replay":
            raise FileNotFoundError(f"cassette not found: {self.path}")

    def __len__(self) -> int:
        return len(self._tape)

    def complete(self, req: ChatRequest) -> str:
        key = req.request_hash()
        if key in self._tape:
            return self._tape[key]
        if self.mode == "replay":
            raise CassetteMiss(key)
        response = self.inner.complete(req)
        with self._lock:
            self._tape[key] = response
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"request_hash": key, "response": response}, ensure_ascii=False) + "\n")
        return response


def record_replay(backend: Backend | None, cassette_path: str | os.PathLike, mode: Mode = "replay") -> RecordReplayBackend:
    return RecordReplayBackend(cassette_path, backend, mode)

"""Chat-completion abstraction with live, replay and scripted backends.

Every pipeline stage talks to a provider through ``complete(ChatRequest)``.
The live backend calls an OpenAI-style HTTP endpoint; the replay backend
serves recorded responses keyed by request digest; the scripted backend pops
queued responses per request tag and never touches the network. Recording
wraps any backend and appends completed calls to a JSON-lines transcript.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import requests

from .errors import (
    CorruptTranscript,
    IoError,
    RateLimited,
    ReplayMiss,
    ScriptExhausted,
    TransportError,
)

logger = logging.getLogger(__name__)

_TAG_RE = re.compile(r"[a-z_]+(:[A-Za-z0-9_-]+)*")

API_KEY_ENV = "MANUAL2KG_API_KEY"
BASE_URL_ENV = "MANUAL2KG_BASE_URL"

_TRANSCRIPT_FIELDS = {"digest", "tag", "system", "user", "model", "response", "latency_ms"}


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request, tagged with its pipeline stage."""

    user_text: str
    tag: str
    system_text: str | None = None
    model_name: str = "default"
    decode_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if not _TAG_RE.fullmatch(self.tag):
            raise ValueError(f"invalid tag: {self.tag!r}")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency_ms: int
    provider_id: str

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be non-negative")


def request_digest(req: ChatRequest) -> str:
    """Stable content hash of the request's semantic identity.

    Excludes decode_params so replay tolerates advisory-parameter changes.
    """
    payload = json.dumps(
        {
            "model": req.model_name,
            "system": req.system_text,
            "tag": req.tag,
            "user": req.user_text,
        },
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TranscriptEntry:
    digest: str
    request: ChatRequest
    response: ChatResponse


@dataclass
class Transcript:
    """Ordered, append-only record of completed calls."""

    entries: list[TranscriptEntry] = field(default_factory=list)

    def append(self, request: ChatRequest, response: ChatResponse) -> TranscriptEntry:
        entry = TranscriptEntry(request_digest(request), request, response)
        self.entries.append(entry)
        return entry


class ChatProvider(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...


# -- transcript file format --------------------------------------------------

def _entry_to_line(entry: TranscriptEntry) -> str:
    return json.dumps(
        {
            "digest": entry.digest,
            "tag": entry.request.tag,
            "system": entry.request.system_text,
            "user": entry.request.user_text,
            "model": entry.request.model_name,
            "response": entry.response.text,
            "latency_ms": entry.response.latency_ms,
        },
        ensure_ascii=False,
    )


def _entry_from_obj(obj: dict, lineno: int, provider_id: str) -> TranscriptEntry:
    if not isinstance(obj, dict) or set(obj) != _TRANSCRIPT_FIELDS:
        raise CorruptTranscript(f"line {lineno}: unexpected fields")
    if not isinstance(obj["digest"], str) or not re.fullmatch(r"[0-9a-f]{64}", obj["digest"]):
        raise CorruptTranscript(f"line {lineno}: bad digest")
    if obj["system"] is not None and not isinstance(obj["system"], str):
        raise CorruptTranscript(f"line {lineno}: bad system field")
    for key in ("tag", "user", "model", "response"):
        if not isinstance(obj[key], str):
            raise CorruptTranscript(f"line {lineno}: bad {key} field")
    if not isinstance(obj["latency_ms"], int) or obj["latency_ms"] < 0:
        raise CorruptTranscript(f"line {lineno}: bad latency_ms")
    request = ChatRequest(
        user_text=obj["user"],
        tag=obj["tag"],
        system_text=obj["system"],
        model_name=obj["model"],
    )
    if request_digest(request) != obj["digest"]:
        raise CorruptTranscript(f"line {lineno}: digest does not match content")
    return TranscriptEntry(
        digest=obj["digest"],
        request=request,
        response=ChatResponse(obj["response"], obj["latency_ms"], provider_id),
    )


def load_transcript(path: str | Path, provider_id: str = "replay") -> Transcript:
    """Parse a JSON-lines transcript file, validating every line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read transcript {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptTranscript(f"line {lineno}: invalid JSON: {exc.msg}") from exc
        entries.append(_entry_from_obj(obj, lineno, provider_id))
    return Transcript(entries=entries)


class TranscriptRecorder:
    """Serialized appender for one transcript file (truncates on open)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("w", encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot open transcript {self.path}: {exc}") from exc

    def append(self, request: ChatRequest, response: ChatResponse) -> None:
        entry = TranscriptEntry(request_digest(request), request, response)
        with self._lock:
            self._fh.write(_entry_to_line(entry) + "\n")
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> TranscriptRecorder:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class RecordingBackend:
    """Wraps another backend and records each completed call."""

    def __init__(self, inner: ChatProvider, recorder: TranscriptRecorder):
        self.inner = inner
        self.recorder = recorder

    def complete(self, req: ChatRequest) -> ChatResponse:
        resp = self.inner.complete(req)
        self.recorder.append(req, resp)
        return resp

    def close(self) -> None:
        self.recorder.close()


def record_transcript(inner: ChatProvider, path: str | Path) -> RecordingBackend:
    return RecordingBackend(inner, TranscriptRecorder(path))


# -- replay backend ----------------------------------------------------------

class ReplayBackend:
    """Serves recorded responses by request digest, order-tolerant.

    Repeated identical requests consume recorded entries in order; once a
    digest's entries run out the last one is served again.
    """

    def __init__(self, transcript: Transcript):
        self._by_digest: dict[str, deque[ChatResponse]] = {}
        self._last: dict[str, ChatResponse] = {}
        self._lock = threading.Lock()
        for entry in transcript.entries:
            self._by_digest.setdefault(entry.digest, deque()).append(entry.response)
            self._last[entry.digest] = entry.response

    def complete(self, req: ChatRequest) -> ChatResponse:
        digest = request_digest(req)
        with self._lock:
            queue = self._by_digest.get(digest)
            if queue is None:
                raise ReplayMiss(
                    f"no recorded response for tag {req.tag!r} (digest {digest[:12]}...)"
                )
            if queue:
                return queue.popleft()
            return self._last[digest]


def open_replay(path: str | Path) -> ReplayBackend:
    return ReplayBackend(load_transcript(path))


# -- scripted backend --------------------------------------------------------

class ScriptedBackend:
    """Pops queued response texts per request tag; never touches the network."""

    def __init__(self, script: dict[str, list[str]] | None = None):
        self._queues: dict[str, deque[str]] = {}
        self._lock = threading.Lock()
        if script:
            for tag, texts in script.items():
                self.queue(tag, texts)

    def queue(self, tag: str, texts: list[str] | tuple[str, ...]) -> None:
        with self._lock:
            self._queues.setdefault(tag, deque()).extend(texts)

    @classmethod
    def from_script_file(cls, path: str | Path) -> ScriptedBackend:
        """Load a JSON object mapping tag to a list of response texts."""
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read script {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise IoError(f"invalid script JSON in {path}: {exc.msg}") from exc
        if not isinstance(data, dict) or not all(
            isinstance(v, list) and all(isinstance(t, str) for t in v)
            for v in data.values()
        ):
            raise IoError(f"script {path} must map tags to lists of strings")
        return cls(data)

    @classmethod
    def from_transcript(cls, path: str | Path) -> ScriptedBackend:
        """Seed queues from a transcript's (tag, response) pairs in order."""
        backend = cls()
        for entry in load_transcript(path, provider_id="scripted").entries:
            backend.queue(entry.request.tag, [entry.response.text])
        return backend

    def complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            queue = self._queues.get(req.tag)
            if not queue:
                raise ScriptExhausted(f"no queued response for tag {req.tag!r}")
            text = queue.popleft()
        return ChatResponse(text=text, latency_ms=0, provider_id="scripted")


# -- live backend ------------------------------------------------------------

class LiveBackend:
    """HTTP chat-completion client with bounded retry on transient failures."""

    def __init__(
        self,
        base_url: str,
        api_key: str,
        *,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff_start: float = 1.0,
        supported_params: tuple[str, ...] = ("temperature", "top_p", "max_tokens"),
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_start = backoff_start
        self.supported_params = set(supported_params)
        self.session = session or requests.Session()
        self._sleep = sleep

    def _payload(self, req: ChatRequest) -> dict:
        messages = []
        if req.system_text:
            messages.append({"role": "system", "content": req.system_text})
        messages.append({"role": "user", "content": req.user_text})
        payload = {"model": req.model_name, "messages": messages}
        for name, value in req.decode_params.items():
            if name in self.supported_params:
                payload[name] = value
            else:
                # Advisory parameter the endpoint does not take; drop, don't fail.
                logger.warning("dropping unsupported decode parameter %r", name)
        return payload

    def _call_once(self, req: ChatRequest) -> ChatResponse:
        start = time.monotonic()
        try:
            http = self.session.post(
                f"{self.base_url}/chat/completions",
                json=self._payload(req),
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"tag {req.tag!r}: {exc}") from exc
        latency_ms = int((time.monotonic() - start) * 1000)
        if http.status_code == 429:
            raise RateLimited(f"tag {req.tag!r}: rate limited (429)")
        if http.status_code != 200:
            raise TransportError(
                f"tag {req.tag!r}: HTTP {http.status_code}: {http.text[:200]}"
            )
        try:
            text = http.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"tag {req.tag!r}: malformed response body") from exc
        if not isinstance(text, str):
            raise TransportError(f"tag {req.tag!r}: non-text response content")
        return ChatResponse(text=text, latency_ms=latency_ms, provider_id="live")

    def complete(self, req: ChatRequest) -> ChatResponse:
        delay = self.backoff_start
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self._call_once(req)
            except (RateLimited, TransportError) as exc:
                if attempt == self.max_attempts:
                    raise
                logger.warning(
                    "attempt %d/%d failed (%s); retrying in %.1fs",
                    attempt,
                    self.max_attempts,
                    exc,
                    delay,
                )
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

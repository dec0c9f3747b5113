"""Chat backends: live HTTP and deterministic fixture replay.

Planner calls are plain chat transcripts (role + content pairs). A
transcript hashes to a digest; the fixture store keeps one response
file per digest so any call can be replayed byte-for-byte offline.
Record mode wraps a live backend and saves whatever it returns.

Store layout: <digest>.txt holds the response text, <digest>.meta a
human-readable copy of the request transcript for curation.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import requests

from .ioutil import atomic_write_text

DEFAULT_KEY_ENV = "RPG_API_KEY"
DEFAULT_TIMEOUT = 60.0


class BackendError(Exception):
    pass


class AuthMissingError(BackendError):
    def __init__(self, env_name: str):
        self.env_name = env_name
        super().__init__(f"credential environment variable {env_name} is not set")


class TransportError(BackendError):
    """Connection failed before any HTTP status arrived."""


class BackendTimeoutError(TransportError):
    pass


class HttpStatusError(BackendError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body[:500]
        super().__init__(f"backend returned HTTP {status}: {self.body!r}")


class MalformedReplyError(BackendError):
    """Response body did not carry choices[0].message.content."""


class FixtureMissError(BackendError):
    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"no fixture recorded for transcript digest {digest}")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@runtime_checkable
class Backend(Protocol):
    def complete(self, messages: list[ChatMessage]) -> str: ...


def message_digest(messages: list[ChatMessage]) -> str:
    """Canonical transcript hash: sha256 of the compact sorted-key JSON
    of [{"role": ..., "content": ...}, ...]."""
    payload = [{"role": m.role, "content": m.content} for m in messages]
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class FixtureStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._write_lock = threading.Lock()

    def response_path(self, digest: str) -> Path:
        return self.root / f"{digest}.txt"

    def get(self, digest: str) -> str:
        path = self.response_path(digest)
        if not path.is_file():
            raise FixtureMissError(digest)
        return path.read_text(encoding="utf-8")

    def put(self, messages: list[ChatMessage], response: str) -> str:
        digest = message_digest(messages)
        meta_lines = [f"digest: {digest}", f"messages: {len(messages)}"]
        for idx, msg in enumerate(messages):
            meta_lines.append(f"--- [{idx}] {msg.role} ---")
            meta_lines.append(msg.content)
        with self._write_lock:
            self.root.mkdir(parents=True, exist_ok=True)
            atomic_write_text(self.response_path(digest), response)
            atomic_write_text(self.root / f"{digest}.meta", "\n".join(meta_lines) + "\n")
        return digest

    def digests(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.stem for p in self.root.glob("*.txt"))


class FixtureBackend:
    """Replay responses from a store; optionally record through a live
    backend on misses."""

    def __init__(self, store: FixtureStore, record_with: Backend | None = None):
        self.store = store
        self.record_with = record_with

    def complete(self, messages: list[ChatMessage]) -> str:
        digest = message_digest(messages)
        try:
            return self.store.get(digest)
        except FixtureMissError:
            if self.record_with is None:
                raise
        response = self.record_with.complete(messages)
        self.store.put(messages, response)
        return response


class HttpBackend:
    """POSTs OpenAI-style chat payloads and returns the first choice."""

    def __init__(
        self,
        url: str,
        model: str = "default",
        key_env: str = DEFAULT_KEY_ENV,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        self.url = url
        self.model = model
        self.key_env = key_env
        self.timeout = timeout

    def complete(self, messages: list[ChatMessage]) -> str:
        key = os.environ.get(self.key_env)
        if not key:
            raise AuthMissingError(self.key_env)
        payload = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
        }
        try:
            reply = requests.post(
                self.url,
                json=payload,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
        except requests.Timeout as exc:
            raise BackendTimeoutError(f"no response within {self.timeout}s") from exc
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if reply.status_code != 200:
            raise HttpStatusError(reply.status_code, reply.text)
        try:
            body = reply.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedReplyError(f"cannot extract completion text: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedReplyError(f"completion content is {type(content).__name__}, not text")
        return content

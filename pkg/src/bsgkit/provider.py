"""Chat-completion provider client, a digest-keyed mock, and prompt templates."""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Callable, Mapping, Optional, Sequence

import httpx

from . import docio

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "BSGKIT_API_KEY"
TEMPLATES = ("analyze", "specify", "transform", "sp_llm", "cot_llm")


class ProviderError(RuntimeError):
    pass


class AuthError(ProviderError):
    pass


class RetriesExhausted(ProviderError):
    pass


class MalformedCompletion(ProviderError):
    pass


def load_template(name: str) -> Template:
    if name not in TEMPLATES:
        raise KeyError(f"no prompt template {name!r}")
    text = resources.files("bsgkit").joinpath("data", "prompts", f"{name}.txt").read_text(encoding="utf-8")
    return Template(text)


def render_prompt(name: str, **fields: str) -> str:
    return load_template(name).substitute(**fields)


@dataclass(frozen=True)
class ProviderSettings:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    token_env: str = DEFAULT_TOKEN_ENV
    retries: int = 3
    backoff_base: float = 1.0
    timeout: float = 60.0


@dataclass(frozen=True)
class Completion:
    text: str
    usage: Mapping[str, Any] = field(default_factory=dict)
    digest: str = ""


def request_digest(messages: Sequence[Mapping[str, str]], model: str, temperature: float) -> str:
    return docio.digest({"messages": list(messages), "model": model, "temperature": str(temperature)})


class Transcript:
    """Append-only JSONL log of exchanges; safe to share between threads."""

    def __init__(self, path: Optional[str | Path] = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(docio.dumps_line(record) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ProviderClient:
    """OpenAI-compatible ``/chat/completions`` client with bounded retries."""

    def __init__(self, settings: ProviderSettings, transcript: Optional[Transcript] = None,
                 transport: Optional[httpx.BaseTransport] = None, sleep: Callable[[float], None] = time.sleep,
                 env: Optional[Mapping[str, str]] = None):
        self.settings = settings
        self.transcript = transcript or Transcript()
        self.transport = transport
        self.sleep = sleep
        self.env = os.environ if env is None else env

    def exchange(self, messages: Sequence[Mapping[str, str]], temperature: float = 0.0) -> Completion:
        s = self.settings
        token = self.env.get(s.token_env)
        if not token:
            raise AuthError(f"environment variable {s.token_env} is not set")
        body = {"model": s.model, "messages": list(messages), "temperature": temperature}
        digest = request_digest(messages, s.model, temperature)
        attempts: list[dict] = []
        started = _now()
        with httpx.Client(transport=self.transport, timeout=s.timeout) as client:
            for attempt in range(s.retries + 1):
                if attempt:
                    self.sleep(s.backoff_base * 2 ** (attempt - 1))
                try:
                    resp = client.post(f"{s.base_url.rstrip('/')}/chat/completions", json=body,
                                       headers={"Authorization": f"Bearer {token}"})
                except httpx.TransportError as exc:
                    attempts.append({"error": type(exc).__name__})
                    continue
                attempts.append({"status": resp.status_code})
                if resp.status_code in (401, 403):
                    self._log(digest, body, None, attempts, started)
                    raise AuthError(f"provider refused credentials ({resp.status_code})")
                if resp.status_code == 429 or resp.status_code >= 500:
                    continue
                if resp.status_code >= 400:
                    self._log(digest, body, None, attempts, started)
                    raise ProviderError(f"provider answered {resp.status_code}")
                try:
                    doc = resp.json()
                    text = doc["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    self._log(digest, body, None, attempts, started)
                    raise MalformedCompletion(f"unexpected completion shape: {exc}") from exc
                usage = doc.get("usage") or {}
                self._log(digest, body, text, attempts, started, usage)
                return Completion(text, usage, digest)
        self._log(digest, body, None, attempts, started)
        raise RetriesExhausted(f"no successful answer after {len(attempts)} attempts")

    def _log(self, digest, body, text, attempts, started, usage=None) -> None:
        self.transcript.append({"digest": digest, "request": body, "response": text, "attempts": attempts,
                                "retries": max(0, len(attempts) - 1), "usage": usage or {},
                                "started": started, "finished": _now()})


class MockProvider:
    """Canned completions keyed by request digest; never touches the network."""

    def __init__(self, canned: Optional[Mapping[str, str]] = None, default: Optional[str] = None,
                 transcript: Optional[Transcript] = None, model: str = "mock"):
        self.canned = dict(canned or {})
        self.default = default
        self.transcript = transcript or Transcript()
        self.model = model

    def digest_for(self, messages: Sequence[Mapping[str, str]], temperature: float = 0.0) -> str:
        return request_digest(messages, self.model, temperature)

    def exchange(self, messages: Sequence[Mapping[str, str]], temperature: float = 0.0) -> Completion:
        digest = self.digest_for(messages, temperature)
        text = self.canned.get(digest, self.default)
        if text is None:
            raise ProviderError(f"mock has no completion for request {digest[:12]}")
        self.transcript.append({"digest": digest, "request": {"messages": list(messages), "model": self.model,
                                                              "temperature": str(temperature)},
                                "response": text, "attempts": [{"status": 200}], "retries": 0, "usage": {}})
        return Completion(text, {}, digest)


_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.S)


def extract_document(text: str) -> Any:
    """The JSON document in a completion: the first fenced block, else the whole text."""
    m = _FENCE.search(text)
    body = m.group(1) if m else text
    try:
        return docio.loads(body)
    except ValueError as exc:
        raise MalformedCompletion(f"completion is not a JSON document: {exc}") from exc

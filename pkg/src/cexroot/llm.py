"""Text-generation gateway with token accounting, retries and cassette replay.

Every pipeline stage talks to the model through :class:`Gateway`. A
gateway runs in one of three modes:

``live``    forward requests to a transport (HTTP or any callable)
``record``  like live, and append each exchange to a cassette
``replay``  answer from a cassette, never touching a transport

Cassette records are matched by ``(tag, sha256(prompt))``; matching by
digest keeps replay deterministic even when requests are issued
concurrently.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import GatewayError

log = logging.getLogger(__name__)

DEFAULT_TOKEN_BUDGET = 50_000
DEFAULT_RETRIES = 3
DEFAULT_MAX_IN_FLIGHT = 4
API_KEY_ENV = "CEXROOT_LLM_KEY"
API_URL_ENV = "CEXROOT_LLM_URL"
API_MODEL_ENV = "CEXROOT_LLM_MODEL"
MODES = ("live", "record", "replay")


class BudgetExceeded(GatewayError):
    pass


class TransportFailure(GatewayError):
    pass


class ReplayExhausted(GatewayError):
    pass


class ReplayMismatch(GatewayError):
    def __init__(self, tag: str, digest: str):
        super().__init__(f"no cassette record for tag {tag!r} with prompt digest {digest[:12]}")
        self.tag = tag
        self.digest = digest


def count_tokens(text: str) -> int:
    """Default estimator: one token per four UTF-8 bytes, rounded up."""
    n = len(text.encode("utf-8"))
    return -(-n // 4)


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_output_tokens: int = 4096
    temperature: float = 0.0
    tag: str = "default"

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class TokenBudget:
    max_prompt_tokens: int = DEFAULT_TOKEN_BUDGET

    def __post_init__(self):
        if self.max_prompt_tokens < 1:
            raise ValueError("token budget must be positive")


@dataclass
class CassetteRecord:
    tag: str
    prompt_digest: str
    response: str

    def to_json(self) -> str:
        return json.dumps({"tag": self.tag, "prompt_digest": self.prompt_digest, "response": self.response})


class Cassette:
    """Ordered prompt/response log stored as JSON lines."""

    def __init__(self, records: list[CassetteRecord] | None = None):
        self.records = list(records or [])
        self._used = [False] * len(self.records)
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path) -> "Cassette":
        records = []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                records.append(CassetteRecord(d["tag"], d["prompt_digest"], d["response"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise GatewayError(f"{path}:{n}: bad cassette record ({exc})") from None
        return cls(records)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(r.to_json() + "\n" for r in self.records), encoding="utf-8")

    def append(self, record: CassetteRecord) -> None:
        with self._lock:
            self.records.append(record)
            self._used.append(True)

    def rewind(self) -> None:
        with self._lock:
            self._used = [False] * len(self.records)

    def take(self, tag: str, digest: str, strict: bool = True) -> str:
        with self._lock:
            fallback = None
            for i, rec in enumerate(self.records):
                if self._used[i] or rec.tag != tag:
                    continue
                if rec.prompt_digest == digest:
                    self._used[i] = True
                    return rec.response
                if fallback is None:
                    fallback = i
            if fallback is None:
                raise ReplayExhausted(f"cassette has no unused records for tag {tag!r}")
            if strict:
                raise ReplayMismatch(tag, digest)
            self._used[fallback] = True
            return self.records[fallback].response

    def __len__(self) -> int:
        return len(self.records)


Transport = Callable[[GenerationRequest], str]


class HttpTransport:
    """OpenAI-compatible chat-completions endpoint.

    The credential comes from ``CEXROOT_LLM_KEY``; URL and model may be
    overridden with ``CEXROOT_LLM_URL`` / ``CEXROOT_LLM_MODEL``.
    """

    def __init__(self, url: str | None = None, model: str | None = None, api_key: str | None = None, timeout: float = 600):
        self.url = url or os.environ.get(API_URL_ENV, "https://api.openai.com/v1/chat/completions")
        self.model = model or os.environ.get(API_MODEL_ENV, "o3-mini")
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        if not self.api_key:
            raise GatewayError(f"live mode needs an API key in ${API_KEY_ENV}")

    def __call__(self, request: GenerationRequest) -> str:
        body = json.dumps(
            {
                "model": self.model,
                "messages": [{"role": "user", "content": request.prompt}],
                "max_completion_tokens": request.max_output_tokens,
                "temperature": request.temperature,
            }
        ).encode("utf-8")
        req = urllib.request.Request(
            self.url,
            data=body,
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {self.api_key}"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise TransportFailure(str(exc)) from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportFailure(f"unexpected response shape: {exc}") from exc


@dataclass
class GatewayStats:
    calls: int = 0
    transport_attempts: int = 0
    prompt_tokens: int = 0
    by_tag: dict[str, int] = field(default_factory=dict)


class Gateway:
    def __init__(
        self,
        transport: Transport | None = None,
        *,
        mode: str = "live",
        cassette: Cassette | None = None,
        budget: TokenBudget | None = None,
        counter: Callable[[str], int] = count_tokens,
        retries: int = DEFAULT_RETRIES,
        backoff: float = 0.5,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        strict: bool = True,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode in ("live", "record") and transport is None:
            raise GatewayError(f"{mode} mode needs a transport")
        if mode in ("record", "replay") and cassette is None:
            raise GatewayError(f"{mode} mode needs a cassette")
        self.transport = transport
        self.mode = mode
        self.cassette = cassette
        self.budget = budget or TokenBudget()
        self.counter = counter
        self.retries = retries
        self.backoff = backoff
        self.max_in_flight = max_in_flight
        self.strict = strict
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._stats_lock = threading.Lock()
        self.stats = GatewayStats()

    def count_tokens(self, text: str) -> int:
        return self.counter(text)

    def fits(self, prompt: str) -> bool:
        return self.counter(prompt) <= self.budget.max_prompt_tokens

    def generate(self, request: GenerationRequest | str, tag: str | None = None) -> str:
        if isinstance(request, str):
            request = GenerationRequest(prompt=request, tag=tag or "default")
        n = self.counter(request.prompt)
        if n > self.budget.max_prompt_tokens:
            raise BudgetExceeded(f"[{request.tag}] prompt has {n} tokens, budget is {self.budget.max_prompt_tokens}")
        with self._stats_lock:
            self.stats.calls += 1
            self.stats.prompt_tokens += n
            self.stats.by_tag[request.tag] = self.stats.by_tag.get(request.tag, 0) + 1
        digest = prompt_digest(request.prompt)
        if self.mode == "replay":
            return self.cassette.take(request.tag, digest, strict=self.strict)
        with self._slots:
            text = self._call_transport(request)
        if self.mode == "record":
            self.cassette.append(CassetteRecord(request.tag, digest, text))
        return text

    def _call_transport(self, request: GenerationRequest) -> str:
        delay = self.backoff
        for attempt in range(self.retries + 1):
            with self._stats_lock:
                self.stats.transport_attempts += 1
            try:
                return self.transport(request)
            except GatewayError as exc:
                if not isinstance(exc, TransportFailure):
                    raise
                err = exc
            except Exception as exc:  # transports are third-party code
                err = TransportFailure(str(exc))
            if attempt < self.retries:
                log.warning("[%s] transport failure (%s), retrying in %.2fs", request.tag, err, delay)
                self._sleep(delay)
                delay *= 2
        raise TransportFailure(f"[{request.tag}] gave up after {self.retries + 1} attempts: {err}")


def scripted(responder: Callable[[GenerationRequest], str], **kwargs) -> Gateway:
    """Live-mode gateway whose transport is a plain function (tests, fixtures)."""
    return Gateway(responder, mode="live", **kwargs)

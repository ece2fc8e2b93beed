"""Chat-completions transport: OpenAI-compatible wire format over HTTP.

Retry policy: HTTP 429 and 5xx are retried with exponential backoff and
full jitter (sleep drawn uniformly from [0, base * 2**attempt], base 1 s,
factor 2) up to the configured retry budget. 401/403 fail immediately.
Every call's token usage is accumulated so runs can report their cost.
"""

from __future__ import annotations

import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol

import requests

from .errors import AuthError, RateLimited, Timeout, TransportError
from .prompts import PromptPayload

API_KEY_ENV = "SOFT_LLM_API_KEY"
BASE_URL_ENV = "SOFT_LLM_BASE_URL"

# Fallback list prices per 1M tokens, overridable in ProviderConfig.
DEFAULT_PROMPT_COST_PER_1M = 2.5
DEFAULT_COMPLETION_COST_PER_1M = 10.0


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str = ""
    model: str = "gpt-4o"
    temperature: float = 0.0
    max_retries: int = 3
    timeout_s: float = 60.0
    max_concurrent: int = 4
    backoff_base_s: float = 1.0
    prompt_cost_per_1m: float = DEFAULT_PROMPT_COST_PER_1M
    completion_cost_per_1m: float = DEFAULT_COMPLETION_COST_PER_1M

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")

    def resolved_base_url(self) -> str:
        url = self.base_url or os.environ.get(BASE_URL_ENV, "")
        if not url:
            raise TransportError(f"no base URL configured (flag or {BASE_URL_ENV})")
        return url.rstrip("/")


@dataclass
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    calls: int = 0

    def add(self, other: "TokenUsage") -> None:
        self.prompt_tokens += other.prompt_tokens
        self.completion_tokens += other.completion_tokens
        self.calls += other.calls

    def cost(self, cfg: ProviderConfig) -> float:
        return (
            self.prompt_tokens / 1e6 * cfg.prompt_cost_per_1m
            + self.completion_tokens / 1e6 * cfg.completion_cost_per_1m
        )

    def as_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "calls": self.calls,
        }


class ChatProvider(Protocol):
    """Anything that can answer a prompt payload with raw response text."""

    def chat(self, payload: PromptPayload) -> tuple[str, TokenUsage]: ...


class HttpChatProvider:
    """Thread-safe client for an OpenAI-compatible /chat/completions endpoint.

    A semaphore bounds in-flight requests at ``cfg.max_concurrent`` no matter
    how many threads call in. ``sleeper`` and ``jitter_rng`` are injectable
    for tests.
    """

    def __init__(
        self,
        cfg: ProviderConfig,
        api_key: str | None = None,
        session: requests.Session | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        jitter_rng: random.Random | None = None,
    ) -> None:
        self.cfg = cfg
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not key:
            raise AuthError(f"no API key (pass one or set {API_KEY_ENV})")
        self._key = key
        self._session = session or requests.Session()
        self._sleep = sleeper
        self._jitter = jitter_rng or random.Random()
        self._gate = threading.Semaphore(cfg.max_concurrent)
        self._usage_lock = threading.Lock()
        self.total_usage = TokenUsage()

    def chat(self, payload: PromptPayload) -> tuple[str, TokenUsage]:
        content, usage = llm_chat(
            self.cfg,
            payload,
            api_key=self._key,
            session=self._session,
            sleeper=self._sleep,
            jitter_rng=self._jitter,
            gate=self._gate,
        )
        with self._usage_lock:
            self.total_usage.add(usage)
        return content, usage

    def total_cost(self) -> float:
        with self._usage_lock:
            return self.total_usage.cost(self.cfg)


def llm_chat(
    cfg: ProviderConfig,
    payload: PromptPayload,
    api_key: str | None = None,
    session: requests.Session | None = None,
    sleeper: Callable[[float], None] = time.sleep,
    jitter_rng: random.Random | None = None,
    gate: threading.Semaphore | None = None,
) -> tuple[str, TokenUsage]:
    """POST one chat request and return (content, usage for this call)."""
    key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
    if not key:
        raise AuthError(f"no API key (pass one or set {API_KEY_ENV})")
    session = session or requests
    jitter_rng = jitter_rng or random.Random()
    url = cfg.resolved_base_url() + "/chat/completions"
    body = {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [dict(m) for m in payload.messages],
    }
    headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    attempt = 0
    while True:
        try:
            if gate is not None:
                gate.acquire()
            try:
                resp = session.post(url, json=body, headers=headers, timeout=cfg.timeout_s)
            finally:
                if gate is not None:
                    gate.release()
        except requests.Timeout as exc:
            raise Timeout(f"attempt timed out after {cfg.timeout_s}s: {exc}") from exc
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc

        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code} from provider (check {API_KEY_ENV})")
        if resp.status_code == 429 or resp.status_code >= 500:
            if attempt >= cfg.max_retries:
                if resp.status_code == 429:
                    raise RateLimited(f"still rate-limited after {cfg.max_retries} retries")
                raise TransportError(
                    f"HTTP {resp.status_code} after {cfg.max_retries} retries"
                )
            sleeper(jitter_rng.uniform(0.0, cfg.backoff_base_s * (2.0**attempt)))
            attempt += 1
            continue
        if resp.status_code != 200:
            raise TransportError(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")

        try:
            doc = resp.json()
            content = doc["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise TransportError(f"response is not a chat completion: {exc}") from exc
        raw_usage = doc.get("usage") or {}
        usage = TokenUsage(
            prompt_tokens=int(raw_usage.get("prompt_tokens", 0) or 0),
            completion_tokens=int(raw_usage.get("completion_tokens", 0) or 0),
            calls=1,
        )
        return str(content), usage


class MockChatProvider:
    """Deterministic in-process provider for tests and offline runs.

    ``responder`` maps a payload to raw response text; a plain dict keyed by
    substrings of the prompt text also works via ``from_table``. Counts
    calls so cache short-circuits are observable.
    """

    def __init__(self, responder: Callable[[PromptPayload], str]) -> None:
        self._responder = responder
        self._lock = threading.Lock()
        self.calls = 0
        self.total_usage = TokenUsage()

    @classmethod
    def from_table(cls, table: dict[str, str], default: str | None = None) -> "MockChatProvider":
        def responder(payload: PromptPayload) -> str:
            text = payload.text
            for needle, answer in table.items():
                if needle in text:
                    return answer
            if default is not None:
                return default
            raise KeyError(f"no scripted response matches prompt: {text[:120]!r}")

        return cls(responder)

    def chat(self, payload: PromptPayload) -> tuple[str, TokenUsage]:
        usage = TokenUsage(prompt_tokens=len(payload.text) // 4, completion_tokens=16, calls=1)
        with self._lock:
            self.calls += 1
            self.total_usage.add(usage)
        return self._responder(payload), usage

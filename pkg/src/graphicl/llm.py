"""Chat-completion and log-probability scoring over an OpenAI-compatible wire.

A deterministic scripted mock implements the same interface for offline
tests; the HTTP client retries transient failures with exponential backoff.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import requests

from .errors import (
    ConfigError,
    ContextLengthExceeded,
    RateLimited,
    TransportError,
    UnsupportedByEndpoint,
)

MOCK_FALLBACK = "The answer is 0."


@dataclass(frozen=True)
class LlmEndpoint:
    base_url: str
    model: str
    api_key_var: str = "LLM_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0  # greedy decoding for reproducibility
    max_tokens: int = 1024
    supports_logprobs: bool = False
    chat_turns: bool = False  # map exemplars to alternating user/assistant turns


def fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


class MockClient:
    """Scripted client keyed by prompt fingerprint; unknown prompts fall back."""

    def __init__(self, script: dict[str, dict] | None = None):
        self.script = script or {}
        self.calls: list[str] = []

    @classmethod
    def from_jsonl(cls, path: str) -> "MockClient":
        script = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                script[record["fingerprint"]] = record
        return cls(script)

    def add(self, prompt: str, response: str, logprobs: list[float] | None = None):
        self.script[fingerprint(prompt)] = {
            "response": response,
            "logprobs": logprobs,
        }

    def complete(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("empty prompt")
        self.calls.append(prompt)
        entry = self.script.get(fingerprint(prompt))
        if entry is None:
            return MOCK_FALLBACK
        return entry["response"]

    def score_continuation(self, context: str, continuation: str) -> list[float]:
        if not continuation:
            return []
        entry = self.script.get(fingerprint(context + "\x00" + continuation))
        if entry is not None and entry.get("logprobs") is not None:
            return list(entry["logprobs"])
        # deterministic fallback: per-token surprisal from a stable hash
        tokens = continuation.split()
        out = []
        for i, tok in enumerate(tokens):
            digest = hashlib.sha256(f"{context}\x01{tok}\x01{i}".encode()).digest()
            out.append(-1.0 - (digest[0] / 255.0))
        return out

    def add_scored(self, context: str, continuation: str, logprobs: list[float]):
        self.script[fingerprint(context + "\x00" + continuation)] = {
            "response": "",
            "logprobs": logprobs,
        }


class HttpClient:
    """OpenAI-compatible chat-completions client with bounded retries."""

    RETRYABLE = {429, 500, 502, 503, 504}

    def __init__(self, endpoint: LlmEndpoint, session=None, sleep=time.sleep):
        self.endpoint = endpoint
        self.session = session or requests.Session()
        self.sleep = sleep

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.endpoint.api_key_var)
        if key is None:
            raise ConfigError(
                f"API key environment variable {self.endpoint.api_key_var} is not set"
            )
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _body(self, prompt: str) -> str:
        if self.endpoint.chat_turns:
            messages = []
            parts = prompt.split("\n\n")
            for part in parts[:-1]:
                if "\nA:" in part:
                    q, a = part.split("\nA:", 1)
                    messages.append({"role": "user", "content": q.strip()})
                    messages.append({"role": "assistant", "content": a.strip()})
                else:
                    messages.append({"role": "user", "content": part})
            messages.append({"role": "user", "content": parts[-1]})
        else:
            messages = [{"role": "user", "content": prompt}]
        payload = {
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": self.endpoint.temperature,
            "max_tokens": self.endpoint.max_tokens,
        }
        # sorted keys keep request bodies byte-identical across runs
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def _post(self, url: str, body: str):
        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            try:
                resp = self.session.post(
                    url,
                    data=body,
                    headers=self._headers(),
                    timeout=self.endpoint.timeout,
                )
            except requests.RequestException as exc:
                last_error = TransportError(str(exc))
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code == 400 and "context" in resp.text.lower():
                    raise ContextLengthExceeded(
                        f"prompt of ~{len(body) // 4} tokens rejected: {resp.text[:200]}"
                    )
                if resp.status_code in self.RETRYABLE:
                    last_error = RateLimited(f"HTTP {resp.status_code}")
                else:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if attempt < self.endpoint.max_retries:
                self.sleep(min(2.0**attempt, 30.0))
        raise last_error

    def complete(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("empty prompt")
        data = self._post(
            self.endpoint.base_url.rstrip("/") + "/chat/completions",
            self._body(prompt),
        )
        choice = data["choices"][0]
        return choice.get("message", {}).get("content") or choice.get("text", "")

    def score_continuation(self, context: str, continuation: str) -> list[float]:
        if not continuation:
            return []
        if not self.endpoint.supports_logprobs:
            raise UnsupportedByEndpoint(
                f"endpoint {self.endpoint.base_url} does not expose echo/logprobs"
            )
        payload = {
            "model": self.endpoint.model,
            "prompt": context + continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0,
        }
        data = self._post(
            self.endpoint.base_url.rstrip("/") + "/completions",
            json.dumps(payload, sort_keys=True, separators=(",", ":")),
        )
        lp = data["choices"][0]["logprobs"]
        offsets = lp["text_offset"]
        logprobs = lp["token_logprobs"]
        start = len(context)
        return [p for off, p in zip(offsets, logprobs) if off >= start and p is not None]

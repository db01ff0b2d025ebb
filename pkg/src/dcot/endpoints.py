"""Chat-completion endpoints: an OpenAI-compatible SSE client and offline stubs.

Every endpoint exposes ``stream_chat(messages, **sampling) -> Iterator[StreamChunk]``.
When the last message has role ``assistant`` the request is a continuation and
the endpoint must extend that text rather than answer afresh.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Protocol, Sequence

import httpx
import numpy as np

from dcot.errors import ConfigError, EndpointError

Message = dict  # {"role": ..., "content": ...}


@dataclass
class StreamChunk:
    text: str = ""
    finish_reason: str | None = None
    completion_tokens: int | None = None


class ChatEndpoint(Protocol):
    def stream_chat(
        self,
        messages: Sequence[Message],
        *,
        temperature: float,
        top_p: float,
        top_k: int,
        max_tokens: int,
        stop: Sequence[str] | None = None,
        seed: int | None = None,
    ) -> Iterator[StreamChunk]: ...


def complete(endpoint: ChatEndpoint, messages: Sequence[Message], **sampling) -> str:
    """Drain a stream into one string."""
    return "".join(c.text for c in endpoint.stream_chat(messages, **sampling))


def _assistant_prefix(messages: Sequence[Message]) -> str:
    if messages and messages[-1].get("role") == "assistant":
        return messages[-1].get("content") or ""
    return ""


def _last_user(messages: Sequence[Message]) -> str:
    for m in reversed(messages):
        if m.get("role") == "user":
            return m.get("content") or ""
    return ""


# -- OpenAI-compatible HTTP client -------------------------------------------------

TRANSIENT_STATUS = {408, 409, 425, 429}


class OpenAIChatEndpoint:
    """``/v1/chat/completions`` over SSE.

    ``continuation_body`` is merged into requests whose final message is an
    assistant prefix; the defaults are the vLLM/SGLang switches for continuing
    the final message verbatim.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 600.0,
        extra_body: dict | None = None,
        continuation_body: dict | None = None,
        client: httpx.Client | None = None,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key = os.environ.get(api_key_env, "")
        self.extra_body = dict(extra_body or {})
        self.continuation_body = (
            {"continue_final_message": True, "add_generation_prompt": False}
            if continuation_body is None
            else dict(continuation_body)
        )
        # httpx.Client is safe to share across threads
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        h = {"Content-Type": "application/json", "Accept": "text/event-stream"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def build_body(self, messages, *, temperature, top_p, top_k, max_tokens, stop=None, seed=None) -> dict:
        body = {
            "model": self.model,
            "messages": list(messages),
            "temperature": temperature,
            "top_p": top_p,
            "top_k": top_k,
            "max_tokens": max_tokens,
            "stream": True,
            "stream_options": {"include_usage": True},
        }
        if stop:
            body["stop"] = list(stop)
        if seed is not None:
            body["seed"] = seed
        body.update(self.extra_body)
        if _assistant_prefix(messages):
            body.update(self.continuation_body)
        return body

    def stream_chat(self, messages, **sampling) -> Iterator[StreamChunk]:
        body = self.build_body(messages, **sampling)
        try:
            with self._client.stream("POST", self.url, json=body, headers=self._headers()) as resp:
                if resp.status_code >= 400:
                    detail = resp.read().decode("utf-8", "replace")[:500]
                    raise EndpointError(
                        f"HTTP {resp.status_code}: {detail}",
                        transient=resp.status_code >= 500 or resp.status_code in TRANSIENT_STATUS,
                        status=resp.status_code,
                    )
                yield from parse_sse_lines(resp.iter_lines())
        except httpx.HTTPError as e:
            raise EndpointError(f"{type(e).__name__}: {e}", transient=True) from e


def parse_sse_lines(lines) -> Iterator[StreamChunk]:
    """Decode OpenAI chat-completion SSE ``data:`` lines into chunks."""
    for line in lines:
        line = line.strip()
        if not line or line.startswith(":") or not line.startswith("data:"):
            continue
        data = line[5:].strip()
        if data == "[DONE]":
            return
        try:
            payload = json.loads(data)
        except json.JSONDecodeError as e:
            raise EndpointError(f"malformed SSE payload: {data[:200]}", transient=True) from e
        if "error" in payload:
            raise EndpointError(str(payload["error"]), transient=True)
        chunk = StreamChunk()
        usage = payload.get("usage")
        if usage and usage.get("completion_tokens") is not None:
            chunk.completion_tokens = int(usage["completion_tokens"])
        for choice in payload.get("choices") or []:
            delta = choice.get("delta") or {}
            chunk.text += delta.get("content") or ""
            if choice.get("finish_reason"):
                chunk.finish_reason = choice["finish_reason"]
        yield chunk


class OpenAIEmbeddingEndpoint:
    """``/v1/embeddings`` client returning a float matrix (one row per text)."""

    def __init__(self, base_url: str, model: str = "all-mpnet-base-v2",
                 api_key_env: str = "OPENAI_API_KEY", batch_size: int = 64,
                 client: httpx.Client | None = None):
        self.url = base_url.rstrip("/") + "/embeddings"
        self.model = model
        self.api_key = os.environ.get(api_key_env, "")
        self.batch_size = batch_size
        self._client = client or httpx.Client(timeout=120.0)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        for i in range(0, len(texts), self.batch_size):
            batch = list(texts[i:i + self.batch_size])
            try:
                resp = self._client.post(self.url, json={"model": self.model, "input": batch}, headers=headers)
            except httpx.HTTPError as e:
                raise EndpointError(str(e)) from e
            if resp.status_code >= 400:
                raise EndpointError(f"HTTP {resp.status_code}: {resp.text[:300]}",
                                    transient=resp.status_code >= 500)
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            rows.extend(d["embedding"] for d in data)
        return np.asarray(rows, dtype=np.float64)


# -- offline stubs -----------------------------------------------------------------

_WORD = re.compile(r"\s*\S+|\s+")


def whitespace_tokens(text: str) -> int:
    return len(text.split())


@dataclass
class ScriptedEndpoint:
    """Deterministic stand-in for a model server.

    ``responder(messages, seed)`` returns the complete response text for a
    conversation; the stub streams whatever lies beyond the assistant prefix,
    one whitespace-delimited word per chunk (or ``chunk_chars`` characters),
    stopping early with ``finish_reason="length"`` at ``max_tokens`` whitespace
    tokens. Usage is reported in the same whitespace units.
    """

    responder: Callable[[Sequence[Message], int | None], str]
    chunk_chars: int | None = None
    report_usage: bool = True
    calls: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _pieces(self, text: str) -> list[str]:
        if self.chunk_chars:
            return [text[i:i + self.chunk_chars] for i in range(0, len(text), self.chunk_chars)]
        return _WORD.findall(text)

    def stream_chat(self, messages, *, temperature, top_p, top_k, max_tokens, stop=None, seed=None):
        prefix = _assistant_prefix(messages)
        with self._lock:
            self.calls.append({"temperature": temperature, "top_p": top_p, "top_k": top_k,
                               "max_tokens": max_tokens, "prefix_len": len(prefix), "seed": seed})
        script = self.responder(messages, seed)
        rest = script[len(prefix):] if script.startswith(prefix) else ""
        if stop:
            cut = min((rest.find(s) for s in stop if s in rest), default=-1)
            if cut >= 0:
                rest = rest[:cut]
        emitted = 0
        finish = "stop"
        for piece in self._pieces(rest):
            n = whitespace_tokens(piece)
            if emitted + n > max_tokens:
                # emit the words that still fit, as a server would
                words = re.match(r"(\s*\S+){%d}" % (max_tokens - emitted), piece) if max_tokens > emitted else None
                if words:
                    emitted = max_tokens
                    yield StreamChunk(text=words.group(0))
                finish = "length"
                break
            emitted += n
            yield StreamChunk(text=piece)
        yield StreamChunk(finish_reason=finish,
                          completion_tokens=emitted if self.report_usage else None)


def constant_responder(text: str):
    return lambda messages, seed: text


class EndlessEndpoint:
    """Emits the same word forever and ignores ``max_tokens``."""

    def __init__(self, word: str = "tok"):
        self.word = word
        self.calls: list = []

    def stream_chat(self, messages, *, temperature, top_p, top_k, max_tokens, stop=None, seed=None):
        self.calls.append({"temperature": temperature, "max_tokens": max_tokens})
        while True:
            yield StreamChunk(text=f" {self.word}")


def load_stub_rules(path: str | Path):
    """Build a responder from a stub file.

    The file is JSON or YAML: ``{"rules": [{"contains": str, "response": str}], "default": str}``.
    The first rule whose ``contains`` occurs in the last user message wins.
    """
    import yaml

    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError(f"stub file {path} must hold a mapping")
    rules = [(r["contains"], r["response"]) for r in raw.get("rules", [])]
    default = raw.get("default")

    def responder(messages, seed):
        user = _last_user(messages)
        for needle, response in rules:
            if needle in user:
                return response
        if default is None:
            raise EndpointError("no stub rule matched and no default", transient=False)
        return default

    return responder


_OPTION_LINE = re.compile(r"^\(?([A-Z])[.)]\s", re.MULTILINE)
_FILLER = ("note", "given", "the", "constraint", "value", "so", "check", "rate", "term",
           "result", "then", "we", "compare", "option", "which", "holds", "first", "next")


class MultipleChoiceStub:
    """Pseudo-model for offline benchmark runs.

    Each (question, seed) deterministically yields either a tagged reasoning
    trace ending in ``The answer is (X).`` or, with probability ``null_rate``,
    an over-long loop with no conclusion that exhausts any realistic budget.
    ``answer_key`` (question text -> letter) lets it be right with probability
    ``accuracy``; without a key the letter is uniform over the options.
    """

    def __init__(self, accuracy: float = 0.5, null_rate: float = 0.1, tagged: bool = True,
                 answer_key: dict | None = None, min_words: int = 20, max_words: int = 300,
                 loop_words: int = 9000):
        self.accuracy = accuracy
        self.null_rate = null_rate
        self.tagged = tagged
        self.answer_key = answer_key or {}
        self.min_words = min_words
        self.max_words = max_words
        self.loop_words = loop_words
        self._cache: dict = {}
        self._lock = threading.Lock()

    def __call__(self, messages, seed) -> str:
        user = _last_user(messages)
        key = (user, seed)
        with self._lock:
            hit = self._cache.get(key)
        if hit is None:
            hit = self._render(user, seed)
            with self._lock:
                self._cache[key] = hit
        return hit

    def _render(self, user: str, seed) -> str:
        digest = hashlib.sha256(f"{seed}\x00{user}".encode()).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        letters = [m.group(1) for m in _OPTION_LINE.finditer(user)] or list("ABCD")
        words = lambda k: " ".join(rng.choice(_FILLER) for _ in range(k))
        if rng.random() < self.null_rate:
            loop = " ".join(["Wait, but let me recompute that once more."] * (self.loop_words // 8))
            head = "<TEMP_LOW> " if self.tagged else ""
            return f"{head}{words(self.min_words)}. {loop}"
        correct = self.answer_key.get(user)
        if correct is not None and rng.random() < self.accuracy:
            letter = correct
        else:
            letter = rng.choice(letters)
        total = rng.randint(self.min_words, self.max_words)
        a, b = sorted(rng.sample(range(1, total), 2)) if total > 2 else (1, 1)
        parts = [words(a), words(b - a), words(total - b)]
        if self.tagged:
            body = f"<TEMP_LOW> {parts[0]}. <TEMP_HIGH> {parts[1]}. <TEMP_MID> {parts[2]}."
        else:
            body = f"{parts[0]}. {parts[1]}. {parts[2]}."
        return f"{body} The answer is ({letter})."

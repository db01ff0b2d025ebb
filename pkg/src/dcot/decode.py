"""Locked / Dynamic temperature decoding over a streaming chat endpoint.

Dynamic mode cannot change temperature inside one HTTP request, so it splits
generation at every control tag: the current request is closed as soon as a
complete tag has streamed, and a continuation request is issued with the text
so far (tag included) as an assistant prefix and the temperature mapped to the
new mode. The tag itself is therefore sampled at the previous temperature.
"""

from __future__ import annotations

import enum
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from dcot.endpoints import ChatEndpoint, Message
from dcot.errors import CounterUnavailableError, EndpointError, PolicyError
from dcot.tagparse import EventKind, TaggedSegment, TagStreamParser, ThinkingMode, segment

log = logging.getLogger(__name__)

MMLU_PRO_MAX_TOKENS = 2048
GPQA_MAX_TOKENS = 8196  # printed value; 8192 was probably meant


class SamplingMode(str, enum.Enum):
    LOCKED = "locked"
    DYNAMIC = "dynamic"


def default_temp_map() -> dict[ThinkingMode, float]:
    return {
        ThinkingMode.DEFAULT: 0.6,
        ThinkingMode.LOW: 0.3,
        ThinkingMode.MID: 0.6,
        ThinkingMode.HIGH: 0.8,
    }


@dataclass
class SamplingPolicy:
    mode: SamplingMode = SamplingMode.LOCKED
    locked_temperature: float = 0.6
    temp_map: dict[ThinkingMode, float] = field(default_factory=default_temp_map)
    top_p: float = 0.95
    top_k: int = 20
    max_output_tokens: int = MMLU_PRO_MAX_TOKENS
    stop: tuple[str, ...] | None = None

    def __post_init__(self):
        self.mode = SamplingMode(self.mode)
        self.temp_map = {ThinkingMode(k): float(v) for k, v in self.temp_map.items()}
        missing = set(ThinkingMode) - set(self.temp_map)
        if missing:
            raise PolicyError(f"temp_map missing modes: {sorted(m.value for m in missing)}")
        temps = [self.locked_temperature, *self.temp_map.values()]
        if any(not t > 0 for t in temps):
            # greedy decoding loops forever on the target models
            raise PolicyError("all temperatures must be > 0")
        if not 0 < self.top_p <= 1:
            raise PolicyError("top_p must be in (0, 1]")
        if self.max_output_tokens < 1:
            raise PolicyError("max_output_tokens must be positive")

    @property
    def initial_temperature(self) -> float:
        if self.mode is SamplingMode.LOCKED:
            return self.locked_temperature
        return self.temp_map[ThinkingMode.DEFAULT]


# -- token counting -----------------------------------------------------------------

class TokenCounter(Protocol):
    name: str

    def count(self, text: str) -> int: ...

    def truncate(self, text: str, n: int) -> str: ...


_WS_TOKEN = re.compile(r"\s*\S+")


class WhitespaceCounter:
    """Fallback counter: whitespace-separated words. Approximate by design."""

    name = "whitespace (approximate)"
    approximate = True

    def count(self, text: str) -> int:
        return len(text.split())

    def truncate(self, text: str, n: int) -> str:
        if n <= 0:
            return ""
        end = 0
        for i, m in enumerate(_WS_TOKEN.finditer(text)):
            if i == n:
                break
            end = m.end()
        else:
            return text
        return text[:end]


class HFTokenizerCounter:
    """Counts with a Hugging Face tokenizer (loaded lazily)."""

    approximate = False

    def __init__(self, name_or_path: str):
        from transformers import AutoTokenizer

        self.name = f"hf:{name_or_path}"
        self._tok = AutoTokenizer.from_pretrained(name_or_path)

    def count(self, text: str) -> int:
        return len(self._tok.encode(text, add_special_tokens=False))

    def truncate(self, text: str, n: int) -> str:
        ids = self._tok.encode(text, add_special_tokens=False)
        return self._tok.decode(ids[:max(n, 0)])


WHITESPACE = WhitespaceCounter()


def count_tokens(text: str, counter: TokenCounter | None = None, usage: int | None = None) -> int:
    """Endpoint-reported usage wins verbatim; otherwise the local counter."""
    if usage is not None:
        return int(usage)
    if counter is None:
        raise CounterUnavailableError("no endpoint usage and no local token counter")
    return counter.count(text) if text else 0


# -- transcript ---------------------------------------------------------------------

class FinishReason(str, enum.Enum):
    STOP = "STOP"
    BUDGET = "BUDGET"
    ERROR = "ERROR"


@dataclass
class RequestRecord:
    temperature: float
    prompt_suffix_len: int
    tokens_generated: int


@dataclass
class DecodeTranscript:
    text: str
    segments: list[TaggedSegment]
    requests: list[RequestRecord]
    total_tokens: int
    truncated: bool
    finish_reason: FinishReason
    error: str | None = None

    @property
    def temperatures(self) -> list[float]:
        return [r.temperature for r in self.requests]


@dataclass
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0

    def delay(self, attempt: int) -> float:
        return self.base_delay * (2 ** attempt)


@dataclass
class _RequestOutcome:
    text: str
    tokens: int
    next_mode: ThinkingMode | None
    budget_hit: bool


def _stream_once(endpoint, messages, temperature, policy, remaining, counter, seed, dynamic):
    detector = TagStreamParser() if dynamic else None
    acc = ""
    estimate = 0
    usage = None
    endpoint_finish = None
    next_mode = None
    budget_hit = False
    stream = endpoint.stream_chat(
        messages, temperature=temperature, top_p=policy.top_p, top_k=policy.top_k,
        max_tokens=remaining, stop=policy.stop, seed=seed,
    )
    try:
        for chunk in stream:
            if chunk.completion_tokens is not None:
                usage = chunk.completion_tokens
            if chunk.finish_reason:
                endpoint_finish = chunk.finish_reason
            if not chunk.text:
                continue
            acc += chunk.text
            if detector is not None:
                for ev in detector.feed(chunk.text):
                    if ev.kind is EventKind.SEGMENT_START and ev.mode is not ThinkingMode.DEFAULT:
                        acc = acc[:ev.offset + len(ev.mode.tag)]
                        next_mode = ev.mode
                        break
            if counter is not None:
                # summed per-chunk counts over-estimate, so an exact recount is
                # only needed once the estimate crosses the budget
                estimate += counter.count(chunk.text)
                if estimate > remaining:
                    estimate = counter.count(acc)
                    if estimate > remaining:
                        acc = counter.truncate(acc, remaining)
                        budget_hit = True
                        next_mode = None
                        break
            if next_mode is not None:
                break
    finally:
        close = getattr(stream, "close", None)
        if close is not None:
            close()

    cut = next_mode is not None or budget_hit
    if usage is not None and not cut:
        tokens = usage
    else:
        tokens = count_tokens(acc, counter)
    if tokens > remaining:
        if counter is not None:
            acc = counter.truncate(acc, remaining)
        tokens = remaining
        budget_hit = True
        next_mode = None
    if endpoint_finish == "length" and next_mode is None:
        budget_hit = True
    return _RequestOutcome(acc, tokens, next_mode, budget_hit)


def decode(
    prompt: Sequence[Message],
    policy: SamplingPolicy,
    endpoint: ChatEndpoint,
    counter: TokenCounter | None = WHITESPACE,
    retry: RetryPolicy | None = None,
    seed: int | None = None,
) -> DecodeTranscript:
    """Generate one response under ``policy``.

    Endpoint failures end the transcript with ``FinishReason.ERROR``; passing
    ``counter=None`` means only endpoint-reported usage is available, and a
    request that has to be cut short then raises ``CounterUnavailableError``.
    """
    retry = retry or RetryPolicy()
    dynamic = policy.mode is SamplingMode.DYNAMIC
    generated = ""
    requests: list[RequestRecord] = []
    total = 0
    temperature = policy.initial_temperature
    finish = FinishReason.STOP
    error = None

    while True:
        remaining = policy.max_output_tokens - total
        if remaining <= 0:
            finish = FinishReason.BUDGET
            break
        messages = list(prompt)
        if generated:
            messages.append({"role": "assistant", "content": generated})
        outcome = None
        for attempt in range(retry.attempts):
            try:
                outcome = _stream_once(endpoint, messages, temperature, policy,
                                       remaining, counter, seed, dynamic)
                break
            except EndpointError as e:
                error = str(e)
                log.warning("endpoint error (attempt %d/%d): %s", attempt + 1, retry.attempts, e)
                if not e.transient or attempt + 1 == retry.attempts:
                    break
                time.sleep(retry.delay(attempt))
        if outcome is None:
            finish = FinishReason.ERROR
            break
        error = None
        requests.append(RequestRecord(temperature, len(generated), outcome.tokens))
        generated += outcome.text
        total += outcome.tokens
        if outcome.budget_hit:
            finish = FinishReason.BUDGET
            break
        if outcome.next_mode is None:
            break
        temperature = policy.temp_map[outcome.next_mode]

    segments = segment(generated)
    if counter is not None:
        for s in segments:
            s.token_count = counter.count(s.literal)
    return DecodeTranscript(
        text=generated,
        segments=segments,
        requests=requests,
        total_tokens=total,
        truncated=finish is FinishReason.BUDGET,
        finish_reason=finish,
        error=error if finish is FinishReason.ERROR else None,
    )


def decode_many(
    prompts: Sequence[Sequence[Message]],
    policy: SamplingPolicy,
    endpoint: ChatEndpoint,
    counter: TokenCounter | None = WHITESPACE,
    retry: RetryPolicy | None = None,
    seed: int | None = None,
    max_concurrency: int = 8,
) -> list[DecodeTranscript]:
    """Decode several prompts concurrently; output order follows input order."""
    if max_concurrency <= 1:
        return [decode(p, policy, endpoint, counter, retry, seed) for p in prompts]
    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        return list(pool.map(lambda p: decode(p, policy, endpoint, counter, retry, seed), prompts))

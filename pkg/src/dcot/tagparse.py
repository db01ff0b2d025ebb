"""Incremental parser for ``<TEMP_*>`` control tags and ``<think>`` blocks.

The parser consumes arbitrary text deltas and emits structural events as soon
as they are unambiguous. A suffix that could still grow into a tag literal is
held back until the next delta (or ``finalize``) settles it, so a tag split
across chunk boundaries is recognised exactly as if it had arrived whole.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

from dcot.errors import ParserFinalizedError


class ThinkingMode(str, enum.Enum):
    DEFAULT = "DEFAULT"
    LOW = "LOW"
    MID = "MID"
    HIGH = "HIGH"

    @property
    def tag(self) -> str:
        """Opening literal for the mode; empty for DEFAULT."""
        return "" if self is ThinkingMode.DEFAULT else f"<TEMP_{self.value}>"


TAG_TO_MODE = {m.tag: m for m in ThinkingMode if m is not ThinkingMode.DEFAULT}
THINK_OPEN_TAG = "<think>"
THINK_CLOSE_TAG = "</think>"
LITERALS = tuple(TAG_TO_MODE) + (THINK_OPEN_TAG, THINK_CLOSE_TAG)


class EventKind(str, enum.Enum):
    SEGMENT_START = "SEGMENT_START"
    TEXT = "TEXT"
    THINK_OPEN = "THINK_OPEN"
    THINK_CLOSE = "THINK_CLOSE"
    END = "END"


@dataclass(frozen=True)
class ParserEvent:
    """One structural event. ``offset`` is the character position in the stream
    where the event's literal (tag or text) begins."""

    kind: EventKind
    mode: ThinkingMode | None = None
    text: str = ""
    offset: int = 0

    def __repr__(self) -> str:
        if self.kind is EventKind.SEGMENT_START:
            return f"SEGMENT_START({self.mode.value})"
        if self.kind is EventKind.TEXT:
            return f"TEXT({self.text!r})"
        return self.kind.value


@dataclass
class TaggedSegment:
    mode: ThinkingMode
    text: str
    start_offset: int
    token_count: int = 0
    in_think: bool = False

    @property
    def literal(self) -> str:
        return self.mode.tag + self.text


def _is_tag_prefix(s: str) -> bool:
    return any(lit.startswith(s) and lit != s for lit in LITERALS)


class TagStreamParser:
    """Streaming tokenizer over control tags.

    Not safe for concurrent mutation; use one instance per stream.
    """

    def __init__(self) -> None:
        self._pending = ""
        self._offset = 0  # stream position of the first pending character
        self._segment_open = False
        self._in_think = False
        self._finalized = False

    @property
    def in_think(self) -> bool:
        return self._in_think

    @property
    def finalized(self) -> bool:
        return self._finalized

    def feed(self, chunk: str) -> list[ParserEvent]:
        if self._finalized:
            raise ParserFinalizedError("feed() called after finalize()")
        buf = self._pending + chunk
        events: list[ParserEvent] = []
        text_start = 0
        i = 0
        n = len(buf)
        while i < n:
            j = buf.find("<", i)
            if j < 0:
                break
            rest = buf[j:]
            literal = next((lit for lit in LITERALS if rest.startswith(lit)), None)
            if literal is None:
                if _is_tag_prefix(rest):
                    # undecidable until more input arrives
                    self._flush_text(events, buf[text_start:j], text_start)
                    self._pending = rest
                    self._offset += j
                    return events
                i = j + 1
                continue
            if literal == THINK_OPEN_TAG and self._in_think:
                i = j + len(literal)
                continue
            if literal == THINK_CLOSE_TAG and not self._in_think:
                i = j + len(literal)
                continue
            self._flush_text(events, buf[text_start:j], text_start)
            self._emit_literal(events, literal, self._offset + j)
            i = text_start = j + len(literal)
        self._flush_text(events, buf[text_start:], text_start)
        self._offset += n
        self._pending = ""
        return events

    def finalize(self) -> list[ParserEvent]:
        if self._finalized:
            raise ParserFinalizedError("finalize() called twice")
        events: list[ParserEvent] = []
        self._flush_text(events, self._pending, 0)
        self._offset += len(self._pending)
        self._pending = ""
        self._finalized = True
        events.append(ParserEvent(EventKind.END, offset=self._offset))
        return events

    def _ensure_segment(self, events: list[ParserEvent], offset: int) -> None:
        if not self._segment_open:
            events.append(
                ParserEvent(EventKind.SEGMENT_START, ThinkingMode.DEFAULT, offset=offset)
            )
            self._segment_open = True

    def _flush_text(self, events: list[ParserEvent], text: str, rel: int) -> None:
        if not text:
            return
        offset = self._offset + rel
        self._ensure_segment(events, offset)
        events.append(ParserEvent(EventKind.TEXT, text=text, offset=offset))

    def _emit_literal(self, events: list[ParserEvent], literal: str, offset: int) -> None:
        mode = TAG_TO_MODE.get(literal)
        if mode is not None:
            events.append(ParserEvent(EventKind.SEGMENT_START, mode, offset=offset))
            self._segment_open = True
            return
        self._ensure_segment(events, offset)
        if literal == THINK_OPEN_TAG:
            self._in_think = True
            events.append(ParserEvent(EventKind.THINK_OPEN, offset=offset))
        else:
            self._in_think = False
            events.append(ParserEvent(EventKind.THINK_CLOSE, offset=offset))


def collect_segments(events: Iterable[ParserEvent]) -> list[TaggedSegment]:
    """Fold an event stream into segments.

    Think delimiters stay inside the segment text so that tag literal plus text,
    concatenated over segments, reproduces the stream.
    """
    segments: list[TaggedSegment] = []
    parts: list[str] = []
    in_think = False

    def close():
        if segments:
            segments[-1].text = "".join(parts)
            parts.clear()

    for ev in events:
        if ev.kind is EventKind.SEGMENT_START:
            close()
            segments.append(TaggedSegment(ev.mode, "", ev.offset, in_think=in_think))
        elif ev.kind is EventKind.TEXT:
            parts.append(ev.text)
        elif ev.kind is EventKind.THINK_OPEN:
            parts.append(THINK_OPEN_TAG)
            in_think = True
        elif ev.kind is EventKind.THINK_CLOSE:
            parts.append(THINK_CLOSE_TAG)
            in_think = False
    close()
    return segments


def parse(text: str) -> list[ParserEvent]:
    p = TagStreamParser()
    return p.feed(text) + p.finalize()


def segment(text: str) -> list[TaggedSegment]:
    return collect_segments(parse(text))


def reconstruct(segments: Iterable[TaggedSegment]) -> str:
    return "".join(s.literal for s in segments)


def visible_text(text: str) -> str:
    """Text outside ``<think>`` blocks, with tag literals removed.

    An unterminated think block hides everything after its opening tag.
    """
    out = []
    in_think = False
    for ev in parse(text):
        if ev.kind is EventKind.THINK_OPEN:
            in_think = True
        elif ev.kind is EventKind.THINK_CLOSE:
            in_think = False
        elif ev.kind is EventKind.TEXT and not in_think:
            out.append(ev.text)
    return "".join(out)


def count_tags(text: str) -> int:
    return sum(1 for s in segment(text) if s.mode is not ThinkingMode.DEFAULT)

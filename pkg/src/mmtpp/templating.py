"""Structured event templates over a unified token vocabulary.

Each event is wrapped in start/end-of-event markers and carries a time
block (four byte tokens), a type block, a text block, and an optional
vision block holding a single image placeholder:

    <|start_of_event|>
      <|time_start|> b b b b <|time_end|>
      <|type_start|> <|type_k|> <|type_end|>
      <|text_start|> ...utf-8 byte tokens... <|text_end|>
      [<|vision_start|> <|image_pad|> <|vision_end|>]
    <|end_of_event|>

Text is tokenized one UTF-8 byte per token, a deterministic lossless
stand-in for a subword tokenizer. The first event of a stream encodes the
interval 0.0; later events encode their raw inter-event interval. Under
an adaptive policy, compressed events collapse to one bare similar-event
token outside any wrappers; under random drop, events vanish and the
intervals of the survivors are recomputed.

Token budgets truncate to the newest whole events that fit. Event blocks
are never split.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import timecodec
from .compression import CompressionPolicy, mask_for
from .errors import (
    BudgetTooSmallError,
    GrammarError,
    TextEncodingError,
    TooShortSequenceError,
    UnknownTypeError,
)
from .events import Event, EventSequence, validate_sequence

STRUCTURAL_TOKENS = (
    "<|start_of_event|>",
    "<|end_of_event|>",
    "<|time_start|>",
    "<|time_end|>",
    "<|type_start|>",
    "<|type_end|>",
    "<|text_start|>",
    "<|text_end|>",
    "<|vision_start|>",
    "<|vision_end|>",
    "<|image_pad|>",
    "<|similar_event|>",
    "<|im_start|>",
    "<|im_end|>",
)
TASK_TOKENS = ("<|time_prediction|>", "<|type_prediction|>", "<|question|>")

N_FIXED = len(STRUCTURAL_TOKENS) + len(TASK_TOKENS)
TEXT_BASE = N_FIXED  # 256 text byte tokens
TIME_BASE = TEXT_BASE + 256  # 256 time byte tokens
TYPE_BASE = TIME_BASE + 256  # E type tokens

TASK_TOKEN_FOR_KIND = {
    "time": "<|time_prediction|>",
    "type": "<|type_prediction|>",
    "text": "<|question|>",
}

# Prompt templates for taxi-style corpora; configurable, golden-tested.
TAXI_SYSTEM_PROMPTS = {
    "stage1": (
        "You are an intelligent urban mobility analysis model specializing in "
        "NYC taxi patterns. Your task is to predict the precise time interval "
        "until the next taxi event in Manhattan. You will be given a history "
        "of taxi trips, where each event includes its type (e.g.Uptown "
        "Pickup, Downtown Drop-off), the time elapsed since the last event, "
        "and a map image of the location."
    ),
    "time": (
        "You are an intelligent urban mobility analysis model specializing in "
        "NYC taxi patterns. Your task is to predict the precise time interval "
        "until the next taxi event in Manhattan. You will be given a history "
        "of taxi trips, where each event includes its type (e.g. Uptown "
        "Pickup, Downtown Drop-off), the time elapsed since the last event, "
        "and a map image of the location. Analyze the patterns in event types "
        "and timing to forecast the time to the next event. Your response "
        "must be exactly four byte tokens representing the time interval."
    ),
    "type": (
        "You are an intelligent urban mobility analysis model specializing in "
        "NYC taxi patterns. Your task is to predict the type of the next taxi "
        "event in Manhattan based on a sequence of past events. You will be "
        "given a history of taxi trips, where each event includes its type "
        "(e.g. Uptown Pickup, Downtown Drop-off), the time elapsed since the "
        "last event, and a map image of the location. Analyze the patterns "
        "in timing and location to forecast the next action. Your response "
        "must be a single token representing one of the six event types."
    ),
}
STAGE1_BANNER = "Event Sequence:"
STAGE2_BANNER = "Event Sequence History:"


class Vocabulary:
    """Stable bijection between token strings and integer ids.

    Layout: structural and task tokens occupy the fixed low ids, then 256
    text byte tokens, 256 time byte tokens, and finally one type token per
    event category, so only type ids depend on the type count.
    """

    def __init__(self, type_count: int):
        if type_count < 1:
            raise ValueError("type_count must be at least 1")
        self.type_count = type_count
        names = list(STRUCTURAL_TOKENS) + list(TASK_TOKENS)
        names += [f"text_byte_{b}" for b in range(256)]
        names += [f"<|byte_{b}|>" for b in range(256)]
        names += [f"<|type_{k}|>" for k in range(type_count)]
        self.id_to_token: tuple[str, ...] = tuple(names)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(names)}
        for name in STRUCTURAL_TOKENS + TASK_TOKENS:
            attr = name.strip("<|>").strip("|")
            setattr(self, attr, self.token_to_id[name])

    # ids 0..16 are declared via setattr in __init__; list them for tooling
    start_of_event: int
    end_of_event: int
    time_start: int
    time_end: int
    type_start: int
    type_end: int
    text_start: int
    text_end: int
    vision_start: int
    vision_end: int
    image_pad: int
    similar_event: int
    im_start: int
    im_end: int
    time_prediction: int
    type_prediction: int
    question: int

    def __len__(self) -> int:
        return len(self.id_to_token)

    def text_byte(self, b: int) -> int:
        return TEXT_BASE + b

    def time_byte(self, b: int) -> int:
        return TIME_BASE + b

    def type_token(self, k: int) -> int:
        if not 0 <= k < self.type_count:
            raise UnknownTypeError(f"type {k} not in [0, {self.type_count})")
        return TYPE_BASE + k

    def is_text_byte(self, i: int) -> bool:
        return TEXT_BASE <= i < TEXT_BASE + 256

    def is_time_byte(self, i: int) -> bool:
        return TIME_BASE <= i < TIME_BASE + 256

    def is_type(self, i: int) -> bool:
        return TYPE_BASE <= i < TYPE_BASE + self.type_count

    def byte_value(self, i: int) -> int:
        """Byte carried by a text or time byte token."""
        if self.is_text_byte(i):
            return i - TEXT_BASE
        if self.is_time_byte(i):
            return i - TIME_BASE
        raise ValueError(f"id {i} is not a byte token")

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.token_to_id, fh, indent=0, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            mapping = json.load(fh)
        type_count = sum(1 for t in mapping if re.fullmatch(r"<\|type_\d+\|>", t))
        vocab = cls(type_count)
        if vocab.token_to_id != mapping:
            raise ValueError("vocabulary file does not match the canonical layout")
        return vocab


@dataclass(frozen=True)
class TokenStream:
    """Integer token ids, optionally tagged with per-token provenance."""

    ids: tuple[int, ...]
    provenance: tuple[str, ...] | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def __add__(self, other: "TokenStream") -> "TokenStream":
        prov = None
        if self.provenance is not None and other.provenance is not None:
            prov = self.provenance + other.provenance
        return TokenStream(self.ids + other.ids, prov)


@dataclass(frozen=True)
class ParsedEvent:
    interval: float
    type_id: int
    text: str
    has_image: bool


@dataclass(frozen=True)
class SimilarEventMarker:
    pass


@dataclass(frozen=True)
class PromptResponsePair:
    prompt: TokenStream
    response: TokenStream
    task_kind: str


def encode_text(text: str, vocab: Vocabulary) -> list[int]:
    """One token per UTF-8 byte; reserved literals in the text are refused."""
    if "<|" in text:
        for literal in vocab.token_to_id:
            if literal.startswith("<|") and literal in text:
                raise TextEncodingError(
                    f"text contains reserved token literal {literal!r}"
                )
    return [TEXT_BASE + b for b in text.encode("utf-8")]


def _event_ids(ev: Event, prev_time: float, vocab: Vocabulary) -> list[int]:
    if ev.type_id >= vocab.type_count or ev.type_id < 0:
        raise UnknownTypeError(
            f"event type {ev.type_id} not in [0, {vocab.type_count})"
        )
    time_bytes = timecodec.encode_time(ev.time - prev_time)
    ids = [vocab.start_of_event, vocab.time_start]
    ids += [vocab.time_byte(b) for b in time_bytes]
    ids += [vocab.time_end, vocab.type_start, vocab.type_token(ev.type_id),
            vocab.type_end, vocab.text_start]
    ids += encode_text(ev.text, vocab)
    ids.append(vocab.text_end)
    if ev.image_ref is not None:
        ids += [vocab.vision_start, vocab.image_pad, vocab.vision_end]
    ids.append(vocab.end_of_event)
    return ids


def _provenance_for(ids: Sequence[int], vocab: Vocabulary) -> tuple[str, ...]:
    tags = []
    for i in ids:
        if vocab.is_text_byte(i):
            tags.append("text")
        elif vocab.is_time_byte(i):
            tags.append("time")
        elif vocab.is_type(i):
            tags.append("type")
        elif i in (vocab.vision_start, vocab.vision_end, vocab.image_pad):
            tags.append("vision")
        elif i in (vocab.time_prediction, vocab.type_prediction, vocab.question):
            tags.append("task")
        else:
            tags.append("structural")
    return tuple(tags)


def encode_event(ev: Event, prev_time: float, vocab: Vocabulary) -> TokenStream:
    """Full template block for one event; interval is ev.time - prev_time."""
    ids = _event_ids(ev, prev_time, vocab)
    return TokenStream(tuple(ids), _provenance_for(ids, vocab))


def sequence_event_blocks(
    seq: EventSequence, vocab: Vocabulary, policy: CompressionPolicy | None
) -> list[list[int]]:
    """Per-event token blocks after applying the compression policy.

    Adaptive mode keeps one entry per event (compressed ones shrink to the
    bare similar-event token); random drop removes entries and re-derives
    the survivors' intervals. The first emitted event encodes 0.0.
    """
    mask = mask_for(seq, policy)
    drop = policy is not None and policy.mode == "random_drop"
    blocks: list[list[int]] = []
    prev_time: float | None = None
    for i, ev in enumerate(seq.events):
        if not mask.keep_full[i]:
            if drop:
                continue
            blocks.append([vocab.similar_event])
            continue
        if drop:
            base = ev.time if prev_time is None else prev_time
        else:
            base = ev.time if i == 0 else seq.events[i - 1].time
        blocks.append(_event_ids(ev, base, vocab))
        prev_time = ev.time
    return blocks


def _preamble_ids(
    vocab: Vocabulary, system_prompt: str | None, banner: str
) -> list[int]:
    if system_prompt is None:
        return []
    ids = [vocab.im_start]
    ids += encode_text("system\n" + system_prompt + "\n", vocab)
    ids.append(vocab.im_end)
    ids += encode_text("\n" + banner + "\n", vocab)
    return ids


def encode_sequence(
    seq: EventSequence,
    vocab: Vocabulary,
    policy: CompressionPolicy | None = None,
    budget: int | None = None,
    system_prompt: str | None = None,
    banner: str = STAGE1_BANNER,
    reserve: int = 0,
) -> TokenStream:
    """Tokenize a whole sequence, newest events first to fill the budget.

    `reserve` holds back tokens from the budget (for a trailing task token).
    """
    validate_sequence(seq)
    blocks = sequence_event_blocks(seq, vocab, policy)
    preamble = _preamble_ids(vocab, system_prompt, banner)
    if budget is not None:
        room = budget - len(preamble) - reserve
        kept: list[list[int]] = []
        total = 0
        for block in reversed(blocks):
            if total + len(block) > room:
                break
            total += len(block)
            kept.append(block)
        if blocks and not kept:
            raise BudgetTooSmallError(
                f"budget {budget} cannot fit a single event "
                f"(preamble {len(preamble)}, reserve {reserve})"
            )
        blocks = kept[::-1]
    ids = list(preamble)
    for block in blocks:
        ids += block
    return TokenStream(tuple(ids), _provenance_for(ids, vocab))


def build_stage1_corpus(
    seqs: Iterable[EventSequence],
    vocab: Vocabulary,
    policy: CompressionPolicy | None = None,
    budget: int | None = None,
    system_prompt: str | None = None,
) -> list[TokenStream]:
    """One training stream per sequence window; deterministic given inputs."""
    return [
        encode_sequence(seq, vocab, policy, budget, system_prompt, STAGE1_BANNER)
        for seq in seqs
    ]


def _response_ids(
    target: Event, prev_time: float, task_kind: str, vocab: Vocabulary
) -> list[int]:
    if task_kind == "time":
        return [vocab.time_byte(b) for b in timecodec.encode_time(target.time - prev_time)]
    if task_kind == "type":
        return [vocab.type_token(target.type_id)]
    if task_kind == "text":
        return encode_text(target.text, vocab) + [vocab.text_end]
    raise ValueError(f"unknown task kind {task_kind!r}")


def build_stage2_pairs(
    seqs: Iterable[EventSequence],
    vocab: Vocabulary,
    policy: CompressionPolicy | None = None,
    budget: int | None = None,
    task_kind: str = "time",
    system_prompt: str | None = None,
    banner: str = STAGE2_BANNER,
) -> list[PromptResponsePair]:
    """Prompt-response pairs for every split point of every sequence.

    The prompt encodes events 1..i plus the task token; the response holds
    the target attribute of event i+1 (its raw interval, its type token, or
    its text terminated by the text-end token).
    """
    task_token = TASK_TOKEN_FOR_KIND[task_kind]
    pairs = []
    for seq in seqs:
        validate_sequence(seq)
        if len(seq) < 2:
            raise TooShortSequenceError(
                f"need at least 2 events for stage-2 pairs, got {len(seq)}"
            )
        for i in range(1, len(seq)):
            history = EventSequence(
                events=seq.events[:i],
                horizon=seq.horizon,
                type_count=seq.type_count,
                time_unit=seq.time_unit,
            )
            prompt = encode_sequence(
                history, vocab, policy, budget, system_prompt, banner, reserve=1
            )
            task_ids = (vocab.token_to_id[task_token],)
            prompt = prompt + TokenStream(task_ids, ("task",))
            response_ids = _response_ids(
                seq.events[i], seq.events[i - 1].time, task_kind, vocab
            )
            response = TokenStream(
                tuple(response_ids), _provenance_for(response_ids, vocab)
            )
            pairs.append(PromptResponsePair(prompt, response, task_kind))
    return pairs


class _Scanner:
    def __init__(self, ids: Sequence[int], vocab: Vocabulary):
        self.ids = ids
        self.vocab = vocab
        self.pos = 0

    def done(self) -> bool:
        return self.pos >= len(self.ids)

    def peek(self) -> int:
        return self.ids[self.pos]

    def name(self, i: int) -> str:
        if 0 <= i < len(self.vocab.id_to_token):
            return self.vocab.id_to_token[i]
        return f"id:{i}"

    def fail(self, expected: str):
        found = "end-of-stream" if self.done() else self.name(self.peek())
        raise GrammarError(self.pos, expected, found)

    def expect(self, token_id: int) -> None:
        if self.done() or self.ids[self.pos] != token_id:
            self.fail(self.name(token_id))
        self.pos += 1

    def take_text_run(self) -> str:
        raw = bytearray()
        while not self.done() and self.vocab.is_text_byte(self.peek()):
            raw.append(self.vocab.byte_value(self.peek()))
            self.pos += 1
        return raw.decode("utf-8", errors="replace")


def parse_stream(
    ts: TokenStream | Sequence[int], vocab: Vocabulary
) -> list[ParsedEvent | SimilarEventMarker]:
    """Recover events and similar-event markers from a token stream.

    Accepts an optional system preamble and an optional trailing task token;
    anything else that breaks the grammar raises with the position and the
    expected token.
    """
    ids = ts.ids if isinstance(ts, TokenStream) else tuple(ts)
    sc = _Scanner(ids, vocab)
    if not sc.done() and sc.peek() == vocab.im_start:
        sc.expect(vocab.im_start)
        sc.take_text_run()
        sc.expect(vocab.im_end)
        sc.take_text_run()
    out: list[ParsedEvent | SimilarEventMarker] = []
    task_ids = {vocab.time_prediction, vocab.type_prediction, vocab.question}
    while not sc.done():
        tok = sc.peek()
        if tok == vocab.similar_event:
            sc.pos += 1
            out.append(SimilarEventMarker())
            continue
        if tok in task_ids:
            sc.pos += 1
            if not sc.done():
                sc.fail("end-of-stream after task token")
            break
        sc.expect(vocab.start_of_event)
        sc.expect(vocab.time_start)
        time_bytes = []
        for _ in range(timecodec.TOKENS_PER_TIME):
            if sc.done() or not vocab.is_time_byte(sc.peek()):
                sc.fail("a time byte token")
            time_bytes.append(vocab.byte_value(sc.peek()))
            sc.pos += 1
        sc.expect(vocab.time_end)
        sc.expect(vocab.type_start)
        if sc.done() or not vocab.is_type(sc.peek()):
            sc.fail("a type token")
        type_id = sc.peek() - TYPE_BASE
        sc.pos += 1
        sc.expect(vocab.type_end)
        sc.expect(vocab.text_start)
        text = sc.take_text_run()
        sc.expect(vocab.text_end)
        has_image = False
        if not sc.done() and sc.peek() == vocab.vision_start:
            sc.expect(vocab.vision_start)
            sc.expect(vocab.image_pad)
            sc.expect(vocab.vision_end)
            has_image = True
        sc.expect(vocab.end_of_event)
        out.append(
            ParsedEvent(
                interval=timecodec.decode_time(time_bytes),
                type_id=type_id,
                text=text,
                has_image=has_image,
            )
        )
    return out


_LITERAL_RE = re.compile(r"<\|[A-Za-z0-9_]+\|>")


def render_stream(ts: TokenStream, vocab: Vocabulary) -> str:
    """Human-readable rendering: literals for specials, raw text for bytes."""
    parts: list[str] = []
    raw = bytearray()
    for i in ts.ids:
        if vocab.is_text_byte(i):
            raw.append(vocab.byte_value(i))
            continue
        if raw:
            parts.append(raw.decode("utf-8", errors="replace"))
            raw = bytearray()
        parts.append(vocab.id_to_token[i])
    if raw:
        parts.append(raw.decode("utf-8", errors="replace"))
    return "".join(parts)


def parse_rendered(text: str, vocab: Vocabulary) -> TokenStream:
    """Inverse of :func:`render_stream` on its image."""
    ids: list[int] = []
    cursor = 0
    for match in _LITERAL_RE.finditer(text):
        literal = match.group(0)
        if literal not in vocab.token_to_id:
            continue
        ids += encode_text(text[cursor : match.start()], vocab)
        ids.append(vocab.token_to_id[literal])
        cursor = match.end()
    ids += encode_text(text[cursor:], vocab)
    return TokenStream(tuple(ids), _provenance_for(ids, vocab))


def write_ids(path: str | Path, ts: TokenStream) -> None:
    """Binary little-endian 32-bit id array."""
    np.asarray(ts.ids, dtype="<u4").tofile(path)


def read_ids(path: str | Path, vocab: Vocabulary | None = None) -> TokenStream:
    ids = tuple(int(i) for i in np.fromfile(path, dtype="<u4"))
    prov = _provenance_for(ids, vocab) if vocab is not None else None
    return TokenStream(ids, prov)

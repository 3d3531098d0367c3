"""Event-sequence data model and JSONL persistence.

Times are kept as 64-bit floats end to end; narrowing to 32 bits happens
only inside the byte codec. A virtual origin t_0 = 0 defines the first
inter-event interval, so a sequence of N events always yields N intervals
and N-1 adjacent interval differences.

Timestamps that tie are rejected, never perturbed: datasets with duplicate
times must be jittered upstream before they reach this module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    HorizonError,
    NonFiniteTimeError,
    NonMonotoneTimeError,
    ParseError,
    SchemaError,
    TypeOutOfRangeError,
)


@dataclass(frozen=True)
class Event:
    """One timestamped multimodal point: time, type, text, optional image."""

    time: float
    type_id: int
    text: str = ""
    image_ref: str | None = None


@dataclass(frozen=True)
class EventSequence:
    """Strictly ordered events over the observation window (0, horizon]."""

    events: tuple[Event, ...]
    horizon: float
    type_count: int
    time_unit: str = "s"

    def __post_init__(self):
        if not isinstance(self.events, tuple):
            object.__setattr__(self, "events", tuple(self.events))

    def __len__(self) -> int:
        return len(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.array([ev.time for ev in self.events], dtype=np.float64)

    @property
    def types(self) -> np.ndarray:
        return np.array([ev.type_id for ev in self.events], dtype=np.int64)


@dataclass(frozen=True)
class IntervalSeries:
    """Inter-event intervals and their adjacent absolute differences.

    ``intervals[i] = t_{i+1} - t_i`` with the virtual origin t_0 = 0, so the
    series is length-preserving; ``adjacent_diffs`` has one entry fewer.
    """

    intervals: np.ndarray
    adjacent_diffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.intervals.flags.writeable = False
        self.adjacent_diffs.flags.writeable = False


def validate_sequence(seq: EventSequence) -> None:
    """Raise if any sequence invariant is violated.

    Ordering errors report the 1-based index of the first offending event;
    t_1 <= 0 counts as non-monotone at index 1 because the ordering chain
    starts at the virtual origin 0.
    """
    if not math.isfinite(seq.horizon) or seq.horizon <= 0:
        raise HorizonError(f"horizon must be positive and finite, got {seq.horizon}")
    prev = 0.0
    for i, ev in enumerate(seq.events, start=1):
        if not math.isfinite(ev.time):
            raise NonFiniteTimeError(f"event {i} has non-finite time {ev.time}")
        if ev.time <= prev:
            raise NonMonotoneTimeError(i)
        if not 0 <= ev.type_id < seq.type_count:
            raise TypeOutOfRangeError(
                f"event {i} has type {ev.type_id}, expected [0, {seq.type_count})"
            )
        prev = ev.time
    if seq.events and seq.events[-1].time > seq.horizon:
        raise HorizonError(
            f"last event at {seq.events[-1].time} exceeds horizon {seq.horizon}"
        )


def intervals(seq: EventSequence) -> IntervalSeries:
    """Inter-event intervals of a valid sequence, left-to-right in float64."""
    validate_sequence(seq)
    times = seq.times
    taus = np.diff(times, prepend=0.0)
    diffs = np.abs(np.diff(taus)) if len(taus) > 1 else np.empty(0)
    return IntervalSeries(intervals=taus, adjacent_diffs=diffs)


_EVENT_FIELDS = ("time", "type", "text", "image")
_SEQ_FIELDS = ("horizon", "type_count", "time_unit", "events")


def _sequence_to_obj(seq: EventSequence) -> dict:
    return {
        "horizon": seq.horizon,
        "type_count": seq.type_count,
        "time_unit": seq.time_unit,
        "events": [
            {
                "time": ev.time,
                "type": ev.type_id,
                "text": ev.text,
                "image": ev.image_ref,
            }
            for ev in seq.events
        ],
    }


def _sequence_from_obj(obj: dict, line: int) -> EventSequence:
    for name in _SEQ_FIELDS:
        if name not in obj:
            raise SchemaError(f"line {line}: missing field '{name}'")
    events = []
    for j, ev in enumerate(obj["events"]):
        for name in _EVENT_FIELDS:
            if name not in ev:
                raise SchemaError(f"line {line}: event {j} missing field '{name}'")
        events.append(
            Event(
                time=float(ev["time"]),
                type_id=int(ev["type"]),
                text=str(ev["text"]),
                image_ref=ev["image"],
            )
        )
    return EventSequence(
        events=tuple(events),
        horizon=float(obj["horizon"]),
        type_count=int(obj["type_count"]),
        time_unit=str(obj["time_unit"]),
    )


def save_jsonl(seqs: Iterable[EventSequence], path: str | Path) -> None:
    """Write one sequence per line; float repr round-trips losslessly."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            fh.write(json.dumps(_sequence_to_obj(seq), ensure_ascii=False))
            fh.write("\n")


def load_jsonl(path: str | Path) -> list[EventSequence]:
    seqs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, exc.msg) from exc
            seqs.append(_sequence_from_obj(obj, line_no))
    return seqs


def empirical_quantiles(
    values: Sequence[float] | np.ndarray, percentiles: Sequence[float]
) -> list[tuple[float, float]]:
    """Empirical quantiles with linear interpolation between order statistics."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot take quantiles of an empty collection")
    qs = np.quantile(arr, list(percentiles), method="linear")
    return [(float(p), float(q)) for p, q in zip(percentiles, qs)]

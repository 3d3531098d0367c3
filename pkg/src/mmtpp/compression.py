"""Adaptive sequence compression by temporal similarity, plus baselines.

An event collapses to the single similar-event token when the absolute
difference between its raw inter-event interval and the previous event's
raw interval falls strictly below the threshold delta. Both intervals are
always the raw ones: whether the previous event was itself compressed
never changes the decision, so masks are a pure function of the interval
series. The first event is always emitted in full.

The random-drop baseline removes events outright (no replacement token),
independently per event under a seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySeriesError
from .events import EventSequence, IntervalSeries, empirical_quantiles, intervals

# Percentiles reported by the quantile table used for threshold selection.
DIFF_PERCENTILES = (0.05, 0.10, 0.20, 0.25, 0.50, 0.75, 0.90, 0.95, 1.00)

DEFAULT_DELTA = 0.2


@dataclass(frozen=True)
class CompressionPolicy:
    """How to shrink a sequence before tokenization.

    mode "adaptive" collapses temporally similar events to one token;
    "random_drop" deletes events; "none" keeps everything. first_interval
    selects the convention for tau_1: "virtual_origin" uses t_1 - 0,
    "zero" uses 0 (matching the first encoded time block).
    """

    mode: str = "adaptive"
    delta: float = DEFAULT_DELTA
    drop_prob: float = 0.25
    seed: int = 0
    first_interval: str = "virtual_origin"

    def __post_init__(self):
        if self.mode not in ("adaptive", "random_drop", "none"):
            raise ValueError(f"unknown compression mode {self.mode!r}")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if not 0 <= self.drop_prob <= 1:
            raise ValueError("drop_prob must lie in [0, 1]")
        if self.first_interval not in ("virtual_origin", "zero"):
            raise ValueError(f"unknown first_interval {self.first_interval!r}")


NO_COMPRESSION = CompressionPolicy(mode="none")


@dataclass(frozen=True)
class CompressionMask:
    """Per-event keep/compress decisions.

    ``keep_full[i]`` is False when event i+1 loses its full block (collapsed
    for adaptive mode, deleted for random_drop). The token-level ratio is
    only known once events are encoded, so it is attached later.
    """

    keep_full: tuple[bool, ...]
    compression_ratio: float | None = None

    def with_ratio(self, ratio: float) -> "CompressionMask":
        return replace(self, compression_ratio=ratio)


def adaptive_mask(series: IntervalSeries, delta: float) -> CompressionMask:
    """Mask from the strict-inequality rule |tau_i - tau_{i-1}| < delta."""
    n = len(series.intervals)
    if n == 0:
        return CompressionMask(keep_full=())
    keep = np.ones(n, dtype=bool)
    keep[1:] = series.adjacent_diffs >= delta
    return CompressionMask(keep_full=tuple(bool(k) for k in keep))


def random_drop_mask(n_events: int, drop_prob: float, seed: int) -> CompressionMask:
    """Drop each event after the first independently with probability drop_prob."""
    if not 0 <= drop_prob <= 1:
        raise ValueError("drop_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    keep = np.ones(n_events, dtype=bool)
    if n_events > 1:
        keep[1:] = rng.random(n_events - 1) >= drop_prob
    return CompressionMask(keep_full=tuple(bool(k) for k in keep))


def mask_for(seq: EventSequence, policy: CompressionPolicy | None) -> CompressionMask:
    """Policy dispatch; "none" (or no policy) keeps every event full."""
    n = len(seq)
    if policy is None or policy.mode == "none":
        return CompressionMask(keep_full=(True,) * n)
    if policy.mode == "random_drop":
        return random_drop_mask(n, policy.drop_prob, policy.seed)
    series = intervals(seq)
    if policy.first_interval == "zero" and n > 0:
        taus = series.intervals.copy()
        taus[0] = 0.0
        diffs = np.abs(np.diff(taus)) if n > 1 else np.empty(0)
        series = IntervalSeries(intervals=taus, adjacent_diffs=diffs)
    return adaptive_mask(series, policy.delta)


def _collect_diffs(source) -> np.ndarray:
    if isinstance(source, IntervalSeries):
        return np.asarray(source.adjacent_diffs, dtype=np.float64)
    if isinstance(source, EventSequence):
        return np.asarray(intervals(source).adjacent_diffs, dtype=np.float64)
    parts = [_collect_diffs(item) for item in source]
    return np.concatenate(parts) if parts else np.empty(0)


def interval_diff_quantiles(
    source: IntervalSeries | EventSequence | Iterable[EventSequence],
    percentiles: Sequence[float] = DIFF_PERCENTILES,
) -> list[tuple[float, float]]:
    """Quantiles of |tau_i - tau_{i-1}| for one series or a whole corpus."""
    diffs = _collect_diffs(source)
    if diffs.size == 0:
        raise EmptySeriesError("no adjacent interval differences to summarize")
    return empirical_quantiles(diffs, percentiles)


@dataclass(frozen=True)
class CompressionReport:
    """Events-in-window statistics for one policy at one token budget."""

    budget: int
    mean_events: float
    max_events: int
    mean_events_uncompressed: float
    max_events_uncompressed: int
    compression_ratio: float

    @property
    def extension_factor(self) -> float:
        return self.mean_events / self.mean_events_uncompressed


def events_in_budget(
    seq: EventSequence, vocab, policy: CompressionPolicy | None, budget: int
) -> int:
    """How many trailing events fit within `budget` tokens, whole events only."""
    from .templating import sequence_event_blocks

    blocks = sequence_event_blocks(seq, vocab, policy)
    total = 0
    count = 0
    for block in reversed(blocks):
        if total + len(block) > budget:
            break
        total += len(block)
        count += 1
    return count


def compression_report(
    seqs: Sequence[EventSequence],
    policy: CompressionPolicy,
    vocab,
    budget: int,
) -> CompressionReport:
    """Compare trailing-window capacity with and without the policy."""
    from .templating import sequence_event_blocks

    counts, counts_unc = [], []
    tokens_comp = 0
    tokens_unc = 0
    for seq in seqs:
        counts.append(events_in_budget(seq, vocab, policy, budget))
        counts_unc.append(events_in_budget(seq, vocab, None, budget))
        tokens_comp += sum(len(b) for b in sequence_event_blocks(seq, vocab, policy))
        tokens_unc += sum(len(b) for b in sequence_event_blocks(seq, vocab, None))
    return CompressionReport(
        budget=budget,
        mean_events=float(np.mean(counts)),
        max_events=int(np.max(counts)),
        mean_events_uncompressed=float(np.mean(counts_unc)),
        max_events_uncompressed=int(np.max(counts_unc)),
        compression_ratio=1.0 - tokens_comp / tokens_unc if tokens_unc else 0.0,
    )

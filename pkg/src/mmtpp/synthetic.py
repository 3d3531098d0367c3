"""Deterministic synthetic corpora for tests, calibration, and experiments.

Three generators:

* a comment-stream-like corpus of long bursty sequences whose adjacent
  interval-difference quantiles are calibrated to a heavy-tailed target
  (median near 0.21 s, 75th percentile near 0.59 s),
* an alternating-grammar corpus where the next interval and type are
  deterministic functions of the history, for mechanism-level learning
  checks,
* a synthetic taxi-trip table shaped like the NYC TLC trip files.
"""

from __future__ import annotations

import csv
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .events import Event, EventSequence
from .taxi import TripRecord

# Interval-process constants, calibrated against the quantile targets
# {p25: 0.063, p50: 0.214, p75: 0.590}; see scripts/compression_study.py.
BURST_TAU_FLOOR = 0.02
BURST_TAU_MEAN = 0.085  # within-burst |diff| is Exp with this mean
CALM_TAU_MEDIAN = 0.66
CALM_TAU_SIGMA = 0.78
REGULAR_BURST_RUN = 10.0
REGULAR_CALM_RUN = 28.0
ULTRA_TAIL_FRAC = 0.7  # ultra sequences end in one long burst

_WORDS = (
    "wow", "nice", "lol", "666", "first", "epic", "again", "why", "no way",
    "great shot", "so fast", "clean", "hype", "gg", "respect", "clip it",
    "哈哈哈", "破防了", "绝了",
    "前排", "高能预警", "强强强",
    "名场面", "来了来了",
    "すごい", "草",
)


def _comment(rng: np.random.Generator) -> str:
    k = int(rng.integers(1, 4))
    return " ".join(str(rng.choice(_WORDS)) for _ in range(k))


def _interval_run(
    rng: np.random.Generator, burst: bool, length: int
) -> np.ndarray:
    if burst:
        return BURST_TAU_FLOOR + rng.exponential(BURST_TAU_MEAN, size=length)
    return rng.lognormal(np.log(CALM_TAU_MEDIAN), CALM_TAU_SIGMA, size=length)


def _regime_intervals(
    rng: np.random.Generator, n: int, burst_run: float, calm_run: float
) -> np.ndarray:
    taus = []
    in_burst = bool(rng.random() < burst_run / (burst_run + calm_run))
    while sum(len(t) for t in taus) < n:
        mean = burst_run if in_burst else calm_run
        length = 1 + int(rng.geometric(1.0 / mean))
        taus.append(_interval_run(rng, in_burst, length))
        in_burst = not in_burst
    return np.concatenate(taus)[:n]


def danmaku_like_corpus(
    n_seqs: int = 50,
    seed: int = 0,
    type_count: int = 4,
    ultra_frac: float = 0.075,
    regular_events: tuple[int, int] = (350, 650),
    ultra_events: tuple[int, int] = (1800, 2400),
) -> list[EventSequence]:
    """Long bursty comment streams; a few sequences end in one giant burst,
    which dominates the compressible trailing windows while the pooled diff
    quantiles stay heavy-tailed."""
    rng = np.random.default_rng(seed)
    n_ultra = int(round(ultra_frac * n_seqs))
    seqs = []
    for i in range(n_seqs):
        ultra = i < n_ultra
        lo, hi = ultra_events if ultra else regular_events
        n = int(rng.integers(lo, hi))
        if ultra:
            tail = int(ULTRA_TAIL_FRAC * n)
            taus = np.concatenate(
                [
                    _regime_intervals(
                        rng, n - tail, REGULAR_BURST_RUN, REGULAR_CALM_RUN
                    ),
                    _interval_run(rng, True, tail),
                ]
            )
        else:
            taus = _regime_intervals(rng, n, REGULAR_BURST_RUN, REGULAR_CALM_RUN)
        times = np.cumsum(taus)
        events = tuple(
            Event(
                time=float(t),
                type_id=int(rng.integers(type_count)),
                text=_comment(rng),
            )
            for t in times
        )
        seqs.append(
            EventSequence(
                events=events,
                horizon=float(times[-1]),
                type_count=type_count,
                time_unit="s",
            )
        )
    return seqs


def alternating_grammar_corpus(
    n_seqs: int = 120,
    seed: int = 0,
    n_events: tuple[int, int] = (16, 28),
    taus: tuple[float, float] = (0.25, 0.75),
    type_count: int = 3,
) -> list[EventSequence]:
    """Intervals alternate between two exact float32 values and types cycle.

    The alternation phase is tied to the starting type, so the next event
    is a deterministic function of any visible history prefix, including
    the single-event prefix whose encoded interval is zero.
    """
    rng = np.random.default_rng(seed)
    seqs = []
    for _ in range(n_seqs):
        n = int(rng.integers(n_events[0], n_events[1] + 1))
        start_type = int(rng.integers(type_count))
        phase = start_type % 2
        t = 0.0
        events = []
        for j in range(n):
            t += taus[(j + phase) % 2]
            events.append(
                Event(time=t, type_id=(start_type + j) % type_count, text="")
            )
        seqs.append(
            EventSequence(
                events=tuple(events),
                horizon=t,
                type_count=type_count,
                time_unit="s",
            )
        )
    return seqs


_CALM_WORD_POOL = (
    "signal", "anchor", "marker", "beacon", "switch", "corner", "bridge",
    "window", "ladder", "copper", "silver", "violet", "meadow", "harbor",
    "timber", "candle", "mirror", "lantern", "stone", "ember",
)


def policy_study_corpus(
    n_seqs: int = 40,
    seed: int = 0,
    type_count: int = 4,
    n_events: tuple[int, int] = (550, 850),
    n_calm_levels: int = 3,
    cycle_words: int = 8,
) -> list[EventSequence]:
    """Long sequences with slow structure for compression-policy studies.

    Calm events carry per-sequence cyclic structure (a small rotation of
    gap levels and words) that is predictable only when many past calm
    events fit in the context window; burst events are high-entropy filler
    with near-constant gaps, so a similarity threshold collapses them.
    """
    rng = np.random.default_rng(seed)
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    seqs = []
    for _ in range(n_seqs):
        n = int(rng.integers(n_events[0], n_events[1]))
        levels = 0.8 + np.cumsum(rng.uniform(0.5, 1.2, size=n_calm_levels))
        words = list(rng.choice(_CALM_WORD_POOL, size=cycle_words, replace=False))
        start_type = int(rng.integers(type_count))
        taus, texts = [], []
        in_burst = bool(rng.integers(2))
        calm_idx = 0
        count = 0
        while count < n:
            run = 1 + int(rng.geometric(1.0 / 20.0))
            for _ in range(min(run, n - count)):
                if in_burst:
                    taus.append(BURST_TAU_FLOOR + rng.exponential(0.06))
                    texts.append("".join(rng.choice(letters, size=6)))
                else:
                    taus.append(float(levels[calm_idx % n_calm_levels]))
                    texts.append(words[calm_idx % cycle_words])
                    calm_idx += 1
                count += 1
            in_burst = not in_burst
        times = np.cumsum(taus)
        events = tuple(
            Event(
                time=float(t),
                type_id=(start_type + j) % type_count,
                text=texts[j],
            )
            for j, t in enumerate(times)
        )
        seqs.append(
            EventSequence(
                events=events,
                horizon=float(times[-1]),
                type_count=type_count,
                time_unit="s",
            )
        )
    return seqs


_MANHATTAN_SPOTS = (
    (40.7029, -74.0154),
    (40.7066, -74.0090),
    (40.7140, -74.0120),
    (40.7233, -74.0030),
    (40.7336, -74.0027),
    (40.7465, -74.0014),
    (40.7496, -73.9876),
    (40.7549, -73.9757),
    (40.7580, -73.9855),
    (40.7638, -73.9918),
    (40.7754, -73.9762),
    (40.7870, -73.9754),
    (40.8116, -73.9465),
)


def _spot(rng: np.random.Generator) -> tuple[float, float]:
    lat, lon = _MANHATTAN_SPOTS[int(rng.integers(len(_MANHATTAN_SPOTS)))]
    lat = float(np.clip(lat + rng.normal(0, 0.006), 40.682, 40.898))
    lon = float(np.clip(lon + rng.normal(0, 0.006), -74.048, -73.902))
    return lat, lon


def make_synthetic_trips(
    n_trips: int = 10000,
    seed: int = 0,
    n_medallions: int = 80,
    n_days: int = 7,
) -> list[TripRecord]:
    """Trip table shaped like the TLC files, second-resolution timestamps."""
    rng = np.random.default_rng(seed)
    trips = []
    for _ in range(n_trips):
        medallion = f"MED{int(rng.integers(n_medallions)):05d}"
        day = datetime(2013, 1, 1) + timedelta(days=int(rng.integers(n_days)))
        pickup = day + timedelta(seconds=int(rng.integers(5 * 3600, 23 * 3600)))
        duration = int(rng.integers(240, 2400))
        p_lat, p_lon = _spot(rng)
        d_lat, d_lon = _spot(rng)
        straight_km = float(
            np.hypot((p_lat - d_lat) * 111.0, (p_lon - d_lon) * 84.3)
        )
        trips.append(
            TripRecord(
                medallion=medallion,
                pickup_time=pickup,
                dropoff_time=pickup + timedelta(seconds=duration),
                pickup_lat=p_lat,
                pickup_lon=p_lon,
                dropoff_lat=d_lat,
                dropoff_lon=d_lon,
                passenger_count=int(rng.integers(1, 7)),
                trip_distance=round(
                    straight_km * 0.621371 * float(rng.uniform(1.1, 1.4)), 2
                ),
            )
        )
    trips.sort(key=lambda t: (t.medallion, t.pickup_time))
    return trips


def write_trips_csv(trips: Sequence[TripRecord], path: str | Path) -> None:
    """TLC-style column names; round-trips through the taxi loader."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "medallion",
                "pickup_datetime",
                "dropoff_datetime",
                "passenger_count",
                "trip_distance",
                "pickup_longitude",
                "pickup_latitude",
                "dropoff_longitude",
                "dropoff_latitude",
            ]
        )
        for t in trips:
            writer.writerow(
                [
                    t.medallion,
                    t.pickup_time.strftime("%Y-%m-%d %H:%M:%S"),
                    t.dropoff_time.strftime("%Y-%m-%d %H:%M:%S"),
                    t.passenger_count,
                    f"{t.trip_distance:.2f}",
                    f"{t.pickup_lon:.6f}",
                    f"{t.pickup_lat:.6f}",
                    f"{t.dropoff_lon:.6f}",
                    f"{t.dropoff_lat:.6f}",
                ]
            )

"""Bit-exact conversion between float32 intervals and four byte tokens.

An interval is narrowed from float64 to IEEE-754 binary32 with
round-to-nearest-even and laid out most-significant byte first. The byte
order is a fixed constant of the format: [62, 162, 34, 34] must decode to
the bit pattern 0x3EA22222 (about 0.3167), never to a denormal.

Decoding is total over all 2^32 patterns; NaN/Inf patterns decode to the
corresponding non-finite floats so downstream evaluation can count them as
failed predictions instead of crashing.
"""

from __future__ import annotations

import math
import struct
from typing import Sequence

import numpy as np

from .errors import NegativeIntervalError, NonFiniteIntervalError, WrongArityError

TOKENS_PER_TIME = 4


def narrow(interval: float) -> float:
    """Narrow a float64 to its nearest float32 (round-to-nearest-even)."""
    return float(np.float32(interval))


def encode_time(interval: float) -> tuple[int, int, int, int]:
    """Four byte values of the narrowed interval, most-significant first."""
    if not math.isfinite(interval):
        raise NonFiniteIntervalError(f"interval must be finite, got {interval}")
    if interval < 0:
        raise NegativeIntervalError(f"interval must be nonnegative, got {interval}")
    raw = struct.pack(">f", np.float32(interval))
    return (raw[0], raw[1], raw[2], raw[3])


def decode_time(tokens: Sequence[int]) -> float:
    """Inverse of :func:`encode_time`; total on all four-byte patterns."""
    if len(tokens) != TOKENS_PER_TIME:
        raise WrongArityError(f"expected 4 byte tokens, got {len(tokens)}")
    return struct.unpack(">f", bytes(tokens))[0]


def encode_times(intervals: np.ndarray) -> np.ndarray:
    """Vectorised :func:`encode_time`; returns a (N, 4) uint8 array."""
    arr = np.asarray(intervals, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteIntervalError("intervals must all be finite")
    if np.any(arr < 0):
        raise NegativeIntervalError("intervals must all be nonnegative")
    return np.ascontiguousarray(arr.astype(np.float32).astype(">f4")).view(
        np.uint8
    ).reshape(-1, TOKENS_PER_TIME)


def decode_times(tokens: np.ndarray) -> np.ndarray:
    """Vectorised :func:`decode_time`; returns float32 values."""
    arr = np.ascontiguousarray(np.asarray(tokens, dtype=np.uint8))
    if arr.ndim != 2 or arr.shape[1] != TOKENS_PER_TIME:
        raise WrongArityError(f"expected shape (N, 4), got {arr.shape}")
    return arr.view(">f4").reshape(-1).astype(np.float32)

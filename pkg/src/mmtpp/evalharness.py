"""Task metrics and compression-policy comparison reports.

RMSE is computed on decoded inter-event intervals; generated byte patterns
that fail to decode to a finite float are excluded from the error but
counted. Perplexity counts every token position uniformly and evaluates
long streams through windows that score each position exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from . import toylm
from .compression import CompressionPolicy
from .errors import EmptyAfterExclusionError, LengthMismatchError
from .events import EventSequence
from .templating import (
    PromptResponsePair,
    TokenStream,
    Vocabulary,
    build_stage1_corpus,
    build_stage2_pairs,
)
from .timecodec import decode_time


def failed_decode_count(preds: Sequence[float]) -> int:
    return int(np.sum(~np.isfinite(np.asarray(preds, dtype=np.float64))))


def rmse(preds: Sequence[float], trues: Sequence[float]) -> float:
    """Root mean squared error after dropping non-finite predictions."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(trues, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatchError(f"{p.shape} predictions vs {t.shape} targets")
    ok = np.isfinite(p)
    if not ok.any():
        raise EmptyAfterExclusionError("no finite predictions left")
    return float(np.sqrt(np.mean((p[ok] - t[ok]) ** 2)))


def acc(preds: Sequence[int], trues: Sequence[int]) -> float:
    p = np.asarray(preds)
    t = np.asarray(trues)
    if p.shape != t.shape:
        raise LengthMismatchError(f"{p.shape} predictions vs {t.shape} targets")
    if p.size == 0:
        raise EmptyAfterExclusionError("nothing to score")
    return float(np.mean(p == t))


def decode_time_prediction(generated: Sequence[int], vocab: Vocabulary) -> float:
    """Decode a generated time answer; NaN when it is not four byte tokens."""
    byte_vals = [vocab.byte_value(t) for t in generated if vocab.is_time_byte(t)]
    if len(byte_vals) != 4:
        return float("nan")
    return float(decode_time(byte_vals))


def decode_type_prediction(generated: Sequence[int], vocab: Vocabulary) -> int:
    """First generated type token, or -1 when none appears."""
    for t in generated:
        if vocab.is_type(t):
            return t - vocab.type_token(0)
    return -1


def windowed_nll(
    model: toylm.ToyLM,
    stream: TokenStream | Sequence[int],
    window: int,
    stride: int | None = None,
) -> tuple[float, int]:
    """Total NLL and target count, scoring each position exactly once.

    With stride >= window, consecutive windows share one boundary token of
    context; smaller strides give later targets longer contexts.
    """
    ids = stream.ids if isinstance(stream, TokenStream) else tuple(stream)
    L = len(ids)
    if L < 2:
        raise ValueError("stream too short to score")
    if window < 2:
        raise ValueError("window must be at least 2")
    stride = stride if stride is not None else max(window // 2, 1)
    total = 0.0
    count = 0
    first_unscored = 1
    b = 0
    while first_unscored < L:
        e = min(b + window, L)
        with torch.no_grad():
            local = toylm.token_nlls(model, ids[b:e])
        total += float(local[first_unscored - b - 1 :].sum())
        count += e - first_unscored
        first_unscored = e
        b = b + stride if stride < window else e - 1
    return total, count


def corpus_ppl(
    model: toylm.ToyLM,
    streams: Iterable[TokenStream],
    window: int,
    stride: int | None = None,
) -> float:
    """exp of the pooled mean NLL over all scored positions."""
    total = 0.0
    count = 0
    for stream in streams:
        t, c = windowed_nll(model, stream, window, stride)
        total += t
        count += c
    if count == 0:
        raise EmptyAfterExclusionError("no scoreable positions")
    return math.exp(total / count)


@dataclass(frozen=True)
class LengthBinPPL:
    lo: float
    hi: float
    n_streams: int
    ppl: float


def ppl_by_length(
    model: toylm.ToyLM,
    streams: Sequence[TokenStream],
    bin_edges: Sequence[float],
    window: int,
    stride: int | None = None,
) -> list[LengthBinPPL]:
    """Pooled perplexity per stream-length bin; empty bins are omitted."""
    edges = list(bin_edges)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        members = [s for s in streams if lo <= len(s) < hi]
        if not members:
            continue
        total = 0.0
        count = 0
        for s in members:
            t, c = windowed_nll(model, s, window, stride)
            total += t
            count += c
        rows.append(
            LengthBinPPL(lo=lo, hi=hi, n_streams=len(members), ppl=math.exp(total / count))
        )
    return rows


@dataclass(frozen=True)
class PairedPPLDelta:
    lo: float
    hi: float
    n_sequences: int
    ppl_compressed: float
    ppl_uncompressed: float

    @property
    def delta(self) -> float:
        return self.ppl_compressed - self.ppl_uncompressed


def paired_ppl_by_length(
    model_compressed: toylm.ToyLM,
    streams_compressed: Sequence[TokenStream],
    model_uncompressed: toylm.ToyLM,
    streams_uncompressed: Sequence[TokenStream],
    lengths: Sequence[float],
    bin_edges: Sequence[float],
    window: int,
    stride: int | None = None,
) -> list[PairedPPLDelta]:
    """Per-bin PPL of two encodings of the same underlying sequences.

    Streams come in aligned pairs (two encodings of sequence i); `lengths`
    keys the bins, typically the underlying event count, since token
    lengths differ between encodings.
    """
    if not (
        len(streams_compressed) == len(streams_uncompressed) == len(lengths)
    ):
        raise LengthMismatchError("paired inputs must align one-to-one")
    edges = list(bin_edges)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        members = [i for i, n in enumerate(lengths) if lo <= n < hi]
        if not members:
            continue
        totals = [0.0, 0.0]
        counts = [0, 0]
        for side, (model, streams) in enumerate(
            [(model_compressed, streams_compressed),
             (model_uncompressed, streams_uncompressed)]
        ):
            for i in members:
                t, c = windowed_nll(model, streams[i], window, stride)
                totals[side] += t
                counts[side] += c
        rows.append(
            PairedPPLDelta(
                lo=lo,
                hi=hi,
                n_sequences=len(members),
                ppl_compressed=math.exp(totals[0] / counts[0]),
                ppl_uncompressed=math.exp(totals[1] / counts[1]),
            )
        )
    return rows


@dataclass(frozen=True)
class MetricReport:
    rmse: float | None
    acc: float | None
    ppl: float | None
    n_failed_decodes: int
    length_bins: tuple[LengthBinPPL, ...] = ()


def evaluate_stage2(
    model: toylm.ToyLM,
    pairs: Sequence[PromptResponsePair],
    vocab: Vocabulary,
    temperature: float | None = None,
    seed: int = 0,
    max_new: int = 16,
) -> MetricReport:
    """Generate answers for stage-2 pairs and score them against the truth."""
    time_preds, time_trues = [], []
    type_preds, type_trues = [], []
    for j, pair in enumerate(pairs):
        out = toylm.generate(
            model,
            pair.prompt,
            pair.task_kind,
            vocab,
            temperature=temperature,
            max_new=max_new,
            seed=seed + j,
        )
        if pair.task_kind == "time":
            truth = decode_time([vocab.byte_value(t) for t in pair.response.ids])
            time_preds.append(decode_time_prediction(out, vocab))
            time_trues.append(truth)
        elif pair.task_kind == "type":
            type_preds.append(decode_type_prediction(out, vocab))
            type_trues.append(pair.response.ids[0] - vocab.type_token(0))
    report_rmse = rmse(time_preds, time_trues) if time_preds else None
    report_acc = acc(type_preds, type_trues) if type_preds else None
    return MetricReport(
        rmse=report_rmse,
        acc=report_acc,
        ppl=None,
        n_failed_decodes=failed_decode_count(time_preds) if time_preds else 0,
    )


def compare_policies(
    seqs: Sequence[EventSequence],
    policies: dict[str, CompressionPolicy | None],
    config: toylm.ToyLMConfig,
    budget: int,
    seeds: Sequence[int] = (0, 1, 2),
    train_frac: float = 0.8,
    tasks: Sequence[str] = ("ppl",),
    max_eval_pairs: int = 200,
) -> list[dict]:
    """Train one toy LM per policy and seed; report PPL (and task metrics).

    Every policy sees the same split, budget, and seeds, so rows differ only
    in how sequences were compressed.
    """
    n_train = int(len(seqs) * train_frac)
    train, test = list(seqs[:n_train]), list(seqs[n_train:])
    if not train or not test:
        raise ValueError("split leaves an empty train or test set")
    vocab = Vocabulary(max(s.type_count for s in seqs))
    rows = []
    for name, policy in policies.items():
        ppls, rmses, accs = [], [], []
        for seed in seeds:
            cfg = replace(config, vocab_size=len(vocab), seed=seed)
            corpus = build_stage1_corpus(train, vocab, policy, budget)
            model, _ = toylm.train_stage1(cfg, corpus)
            test_streams = build_stage1_corpus(test, vocab, policy, None)
            ppls.append(corpus_ppl(model, test_streams, window=budget))
            for task in tasks:
                if task == "ppl":
                    continue
                pairs = build_stage2_pairs(train, vocab, policy, budget, task)
                model2, _ = toylm.train_stage2(model, pairs, cfg)
                eval_pairs = build_stage2_pairs(test, vocab, policy, budget, task)
                report = evaluate_stage2(
                    model2, eval_pairs[:max_eval_pairs], vocab, seed=seed
                )
                if task == "time" and report.rmse is not None:
                    rmses.append(report.rmse)
                if task == "type" and report.acc is not None:
                    accs.append(report.acc)
        row = {
            "policy": name,
            "ppl_mean": float(np.mean(ppls)),
            "ppl_per_seed": ppls,
        }
        if rmses:
            row["rmse_mean"] = float(np.mean(rmses))
        if accs:
            row["acc_mean"] = float(np.mean(accs))
        rows.append(row)
    return rows


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")


def write_svg_lines(
    path: str | Path,
    series: dict[str, Sequence[tuple[float, float]]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    width: int = 640,
    height: int = 400,
) -> None:
    """Minimal deterministic SVG line chart (no plotting dependency)."""
    margin = 60
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def px(x: float) -> float:
        return margin + (x - x_lo) / x_span * (width - 2 * margin)

    def py(y: float) -> float:
        return height - margin - (y - y_lo) / y_span * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="18" y="{height / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {height / 2:.1f})">{y_label}</text>',
    ]
    for k, (name, pts) in enumerate(sorted(series.items())):
        color = _SVG_COLORS[k % len(_SVG_COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 16 * k}" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")

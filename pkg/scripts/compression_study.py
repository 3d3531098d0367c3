#!/usr/bin/env python3
"""Threshold-selection study on the synthetic comment-stream corpus.

Prints the adjacent interval-difference quantile table (the basis for
picking the similarity threshold), then the events-per-window report for
several thresholds at a fixed token budget.
"""

import argparse

from mmtpp.compression import (
    CompressionPolicy,
    compression_report,
    interval_diff_quantiles,
)
from mmtpp.synthetic import danmaku_like_corpus
from mmtpp.templating import Vocabulary


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-seqs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--budget", type=int, default=4096)
    ap.add_argument("--deltas", default="0.05,0.2,0.5")
    args = ap.parse_args()

    corpus = danmaku_like_corpus(n_seqs=args.n_seqs, seed=args.seed)
    print(f"corpus: {len(corpus)} sequences, "
          f"{sum(len(s) for s in corpus)} events\n")
    print("percentile,abs_diff")
    for p, v in interval_diff_quantiles(corpus):
        print(f"{p:.3f},{v:.3f}")

    vocab = Vocabulary(max(s.type_count for s in corpus))
    print("\ndelta,mean_events,max_events,mean_uncompressed,extension,token_ratio")
    for delta in (float(d) for d in args.deltas.split(",")):
        rep = compression_report(
            corpus, CompressionPolicy(mode="adaptive", delta=delta), vocab,
            args.budget,
        )
        print(
            f"{delta},{rep.mean_events:.1f},{rep.max_events},"
            f"{rep.mean_events_uncompressed:.1f},"
            f"{rep.extension_factor:.2f},{rep.compression_ratio:.3f}"
        )


if __name__ == "__main__":
    main()

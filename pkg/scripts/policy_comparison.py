#!/usr/bin/env python3
"""Held-out perplexity of the toy LM under different compression policies.

Trains one model per (policy, seed) on streams encoded under that policy
at a fixed token budget, then reports test perplexity side by side:
adaptive compression vs no compression vs random event dropping.
"""

import argparse

from mmtpp.compression import CompressionPolicy
from mmtpp.evalharness import compare_policies
from mmtpp.synthetic import danmaku_like_corpus
from mmtpp.toylm import ToyLMConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-seqs", type=int, default=40)
    ap.add_argument("--corpus-seed", type=int, default=5)
    ap.add_argument("--budget", type=int, default=1024)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--drop-prob", type=float, default=0.25)
    args = ap.parse_args()

    corpus = danmaku_like_corpus(n_seqs=args.n_seqs, seed=args.corpus_seed)
    policies = {
        "adaptive": CompressionPolicy(mode="adaptive", delta=0.2),
        "none": None,
        "random_drop": CompressionPolicy(
            mode="random_drop", drop_prob=args.drop_prob, seed=0
        ),
    }
    config = ToyLMConfig(
        vocab_size=1,  # replaced per run
        embed_dim=64,
        n_layers=2,
        n_heads=2,
        context_len=args.budget,
        stage1_lr=1e-3,
        stage1_epochs=args.epochs,
    )
    rows = compare_policies(
        corpus, policies, config, args.budget,
        seeds=[int(s) for s in args.seeds.split(",")],
    )
    print("policy,ppl_mean,ppl_per_seed")
    for row in rows:
        per_seed = ";".join(f"{p:.3f}" for p in row["ppl_per_seed"])
        print(f'{row["policy"]},{row["ppl_mean"]:.3f},{per_seed}')


if __name__ == "__main__":
    main()

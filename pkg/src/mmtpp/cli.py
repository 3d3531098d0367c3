"""Single entry point wiring all modules into reproducible pipelines.

Every subcommand that writes artifacts also writes a manifest (argument
hash, seed, library versions) next to its outputs, and identical inputs
plus an identical seed reproduce byte-identical artifacts. Exit codes:
0 success, 1 domain error (machine-readable JSON on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, evalharness, toylm
from .compression import (
    DIFF_PERCENTILES,
    CompressionPolicy,
    compression_report,
    interval_diff_quantiles,
)
from .errors import MMTPPError
from .events import empirical_quantiles, intervals, load_jsonl, save_jsonl
from .templating import (
    Vocabulary,
    build_stage1_corpus,
    build_stage2_pairs,
    encode_sequence,
    render_stream,
    write_ids,
)
from .tpp_models import fit_mle, load_model, loglik, save_model
from .taxi import (
    GeoAffine,
    RegionScheme,
    build_sequences,
    load_bbox,
    load_gazetteer,
    load_trips_csv,
    synthetic_raster,
)


def _versions() -> dict:
    import scipy
    import torch

    return {
        "mmtpp": __version__,
        "python": ".".join(map(str, sys.version_info[:2])),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
    }


def write_manifest(out_path: Path, command: str, args: dict) -> None:
    args = {k: v for k, v in args.items() if k != "func"}
    canon = json.dumps(args, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "args": args,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "seed": args.get("seed"),
        "versions": _versions(),
    }
    path = out_path / "manifest.json" if out_path.is_dir() else Path(
        str(out_path) + ".manifest.json"
    )
    path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
        encoding="utf-8",
    )


def _policy_from_args(args) -> CompressionPolicy | None:
    if getattr(args, "random_drop", None) is not None:
        return CompressionPolicy(
            mode="random_drop", drop_prob=args.random_drop, seed=args.seed
        )
    mode = getattr(args, "compress", "none")
    if mode in (None, "none"):
        return None
    return CompressionPolicy(mode="adaptive", delta=args.delta)


def _write_csv(path: str | None, header: list[str], rows: list[list]) -> None:
    sink = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        writer = csv.writer(sink)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path:
            sink.close()


def cmd_validate(args) -> int:
    seqs = load_jsonl(args.file)
    for i, seq in enumerate(seqs):
        intervals(seq)  # validates as a side effect
    print(f"ok: {len(seqs)} sequences valid")
    return 0


def cmd_stats(args) -> int:
    seqs = load_jsonl(args.file)
    taus = np.concatenate([intervals(s).intervals for s in seqs])
    rows = [
        [f"{p:.3f}", repr(v)] for p, v in empirical_quantiles(taus, DIFF_PERCENTILES)
    ]
    _write_csv(args.out, ["percentile", "value"], rows)
    return 0


def cmd_quantiles(args) -> int:
    seqs = load_jsonl(args.file)
    rows = [[f"{p:.3f}", repr(v)] for p, v in interval_diff_quantiles(seqs)]
    _write_csv(args.out, ["percentile", "value"], rows)
    return 0


def cmd_encode(args) -> int:
    seqs = load_jsonl(args.input)
    vocab_path = Path(args.vocab)
    if vocab_path.exists():
        vocab = Vocabulary.load(vocab_path)
    else:
        vocab = Vocabulary(max(s.type_count for s in seqs))
        vocab.save(vocab_path)
    policy = _policy_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, seq in enumerate(seqs):
        stream = encode_sequence(seq, vocab, policy, args.budget)
        if args.format == "text":
            (out_dir / f"stream_{i:05d}.txt").write_text(
                render_stream(stream, vocab), encoding="utf-8"
            )
        else:
            write_ids(out_dir / f"stream_{i:05d}.ids", stream)
    write_manifest(out_dir, "encode", vars(args))
    print(f"encoded {len(seqs)} streams -> {out_dir}")
    return 0


def cmd_compress(args) -> int:
    seqs = load_jsonl(args.input)
    vocab = Vocabulary(max(s.type_count for s in seqs))
    policy = _policy_from_args(args)
    if policy is None:
        policy = CompressionPolicy(mode="adaptive", delta=args.delta)
    rep = compression_report(seqs, policy, vocab, args.budget)
    _write_csv(
        args.out,
        ["budget", "mean_events", "max_events", "mean_events_uncompressed",
         "max_events_uncompressed", "compression_ratio"],
        [[rep.budget, f"{rep.mean_events:.2f}", rep.max_events,
          f"{rep.mean_events_uncompressed:.2f}", rep.max_events_uncompressed,
          f"{rep.compression_ratio:.4f}"]],
    )
    return 0


def cmd_build_taxi(args) -> int:
    trips = load_trips_csv(args.trips)
    scheme = RegionScheme()
    gazetteer = load_gazetteer(args.gazetteer)
    raster = affine = None
    patch_dir = None
    if not args.no_images:
        bbox = load_bbox(args.bbox)
        if args.raster == "synthetic":
            raster = synthetic_raster(args.raster_width, args.raster_height)
        else:
            from PIL import Image

            raster = np.asarray(Image.open(args.raster))
        affine = GeoAffine.from_bbox(
            bbox["lon_min"], bbox["lon_max"], bbox["lat_min"], bbox["lat_max"],
            raster.shape[1], raster.shape[0],
        )
        patch_dir = Path(args.out) / "patches"
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seqs = build_sequences(
        trips, scheme, gazetteer, args.target,
        raster=raster, affine=affine, patch_dir=patch_dir,
    )
    save_jsonl(seqs, out_dir / "sequences.jsonl")
    write_manifest(out_dir, "build-taxi", vars(args))
    print(f"built {len(seqs)} sequences -> {out_dir / 'sequences.jsonl'}")
    return 0


def cmd_fit(args) -> int:
    seqs = load_jsonl(args.input)
    kind = {"hawkes": "exp_hawkes"}.get(args.variant, args.variant)
    result = fit_mle(seqs, kind=kind, max_iter=args.max_iter)
    save_model(result.model, args.out)
    write_manifest(Path(args.out), "fit", vars(args))
    print(
        f"fitted {args.variant}: loglik {result.trace[-1]:.4f} "
        f"({result.n_iter} iterations, converged={result.converged})"
    )
    return 0


def cmd_loglik(args) -> int:
    model = load_model(args.model)
    seqs = load_jsonl(args.input)
    rows = []
    for i, seq in enumerate(seqs):
        rep = loglik(model, seq)
        rows.append([i, len(seq), repr(rep.total), repr(rep.survival_term)])
    _write_csv(args.out, ["sequence", "n_events", "loglik", "survival_term"], rows)
    return 0


def _load_lm_config(path: str | None, vocab_size: int, seed: int) -> toylm.ToyLMConfig:
    values = {}
    if path:
        values = json.loads(Path(path).read_text(encoding="utf-8"))
    known = {f.name for f in fields(toylm.ToyLMConfig)}
    unknown = set(values) - known
    if unknown:
        raise MMTPPError(f"unknown config fields: {sorted(unknown)}")
    values.setdefault("vocab_size", vocab_size)
    values.setdefault("seed", seed)
    return toylm.ToyLMConfig(**values)


def cmd_train(args) -> int:
    seqs = load_jsonl(args.corpus)
    vocab = Vocabulary(max(s.type_count for s in seqs))
    policy = _policy_from_args(args)
    config = _load_lm_config(args.config, len(vocab), args.seed)
    if args.stage == 1:
        corpus = build_stage1_corpus(seqs, vocab, policy, args.budget)
        model, losses = toylm.train_stage1(config, corpus)
    else:
        pairs = build_stage2_pairs(seqs, vocab, policy, args.budget, args.task)
        init = toylm.load_checkpoint(args.init) if args.init else None
        model, losses = toylm.train_stage2(init, pairs, config)
    toylm.save_checkpoint(model, args.out)
    write_manifest(Path(args.out), "train", vars(args))
    print(f"stage {args.stage} losses: {[round(x, 4) for x in losses]}")
    return 0


def cmd_generate(args) -> int:
    model = toylm.load_checkpoint(args.checkpoint)
    seqs = load_jsonl(args.input)
    vocab = Vocabulary(max(s.type_count for s in seqs))
    policy = _policy_from_args(args)
    pairs = build_stage2_pairs(seqs, vocab, policy, args.budget, args.task)
    pairs = pairs[: args.max_eval]
    report = evalharness.evaluate_stage2(
        model, pairs, vocab, temperature=args.temperature, seed=args.seed
    )
    rows = []
    if args.task == "time":
        rows.append(["rmse", repr(report.rmse)])
        rows.append(["n_failed_decodes", report.n_failed_decodes])
    if args.task == "type":
        rows.append(["acc", repr(report.acc)])
    _write_csv(args.out, ["metric", "value"], rows)
    return 0


def cmd_eval(args) -> int:
    model = toylm.load_checkpoint(args.checkpoint)
    seqs = load_jsonl(args.test)
    vocab = Vocabulary(max(s.type_count for s in seqs))
    policy = _policy_from_args(args)
    streams = build_stage1_corpus(seqs, vocab, policy, None)
    window = args.budget or model.config.context_len
    overall = evalharness.corpus_ppl(model, streams, window=window)
    edges = [float(x) for x in args.bins.split(",")]
    bins = evalharness.ppl_by_length(model, streams, edges, window=window)
    rows = [["overall", "", "", repr(overall)]]
    rows += [[f"{b.lo:g}", f"{b.hi:g}", b.n_streams, repr(b.ppl)] for b in bins]
    _write_csv(args.out, ["bin_lo", "bin_hi", "n_streams", "ppl"], rows)
    if args.svg:
        pts = [((b.lo + b.hi) / 2, b.ppl) for b in bins]
        if pts:
            evalharness.write_svg_lines(
                args.svg, {"ppl": pts}, title="perplexity by stream length",
                x_label="stream length (tokens)", y_label="ppl",
            )
    return 0


def cmd_compare(args) -> int:
    seqs = load_jsonl(args.input)
    policies: dict[str, CompressionPolicy | None] = {}
    for name in args.policies.split(","):
        if name == "none":
            policies[name] = None
        elif name == "adaptive":
            policies[name] = CompressionPolicy(mode="adaptive", delta=args.delta)
        elif name == "random_drop":
            policies[name] = CompressionPolicy(
                mode="random_drop", drop_prob=args.drop_prob, seed=args.seed
            )
        else:
            raise MMTPPError(f"unknown policy {name!r}")
    config = _load_lm_config(args.config, 1, args.seed)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = evalharness.compare_policies(
        seqs, policies, config, args.budget, seeds=seeds,
        tasks=tuple(args.tasks.split(",")),
    )
    out_rows = []
    for row in rows:
        out_rows.append(
            [row["policy"], repr(row["ppl_mean"]),
             repr(row.get("rmse_mean", "")), repr(row.get("acc_mean", "")),
             ";".join(repr(p) for p in row["ppl_per_seed"])]
        )
    _write_csv(args.out, ["policy", "ppl_mean", "rmse_mean", "acc_mean", "ppl_per_seed"], out_rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmtpp",
        description="multimodal event-sequence toolkit "
        "(all stochastic stages take an explicit --seed; defaults are fixed)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check sequence invariants")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="interval quantiles as CSV")
    p.add_argument("file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("quantiles", help="adjacent interval-difference quantiles")
    p.add_argument("file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_quantiles)

    def add_policy_flags(p, with_compress=True):
        if with_compress:
            p.add_argument("--compress", choices=["none", "adaptive"], default="none")
        p.add_argument("--delta", type=float, default=0.2)
        p.add_argument("--random-drop", dest="random_drop", type=float, default=None)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("encode", help="tokenize sequences to stream files")
    p.add_argument("--input", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--format", choices=["text", "binary"], default="text")
    p.add_argument("--out", required=True)
    add_policy_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("compress", help="events-in-budget report")
    p.add_argument("--input", required=True)
    p.add_argument("--budget", type=int, default=4096)
    p.add_argument("--out")
    add_policy_flags(p, with_compress=False)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("build-taxi", help="construct taxi-style sequences")
    p.add_argument("--trips", required=True)
    p.add_argument("--raster", default="synthetic",
                   help="path to a PNG, or 'synthetic' for the bundled grid")
    p.add_argument("--raster-width", type=int, default=1600)
    p.add_argument("--raster-height", type=int, default=2000)
    p.add_argument("--bbox", help="JSON sidecar with lon/lat bounds")
    p.add_argument("--gazetteer", default=None)
    p.add_argument("--target", type=int, default=100)
    p.add_argument("--no-images", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_taxi)

    p = sub.add_parser("fit", help="maximum-likelihood intensity model")
    p.add_argument("--variant", choices=["poisson", "hawkes", "exp_hawkes"],
                   required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("loglik", help="per-sequence log-likelihood CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("train", help="train the toy LM")
    p.add_argument("--stage", type=int, choices=[1, 2], required=True)
    p.add_argument("--config", help="JSON with ToyLMConfig fields")
    p.add_argument("--corpus", required=True)
    p.add_argument("--task", choices=["time", "type", "text"], default="time")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--init", help="stage-1 checkpoint to continue from")
    p.add_argument("--out", required=True)
    add_policy_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="answer stage-2 prompts and score")
    p.add_argument("--task", choices=["time", "type", "text"], required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--max-eval", type=int, default=200)
    p.add_argument("--out")
    add_policy_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="perplexity report (optionally SVG)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--bins", default="0,256,512,1024,2048,4096,1000000")
    p.add_argument("--svg")
    p.add_argument("--out")
    add_policy_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="side-by-side policy comparison")
    p.add_argument("--input", required=True)
    p.add_argument("--policies", default="adaptive,none,random_drop")
    p.add_argument("--budget", type=int, default=1024)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--tasks", default="ppl")
    p.add_argument("--drop-prob", dest="drop_prob", type=float, default=0.25)
    p.add_argument("--config", help="JSON with ToyLMConfig fields")
    p.add_argument("--out")
    add_policy_flags(p, with_compress=False)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MMTPPError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

import json

import pytest

from mmtpp.cli import main
from mmtpp.events import Event, EventSequence, save_jsonl
from mmtpp.synthetic import danmaku_like_corpus, make_synthetic_trips, write_trips_csv


@pytest.fixture()
def corpus_file(tmp_path):
    seqs = danmaku_like_corpus(
        n_seqs=6, seed=0, regular_events=(30, 60), ultra_events=(70, 90)
    )
    path = tmp_path / "seqs.jsonl"
    save_jsonl(seqs, path)
    return path


def test_validate_ok(corpus_file, capsys):
    assert main(["validate", str(corpus_file)]) == 0
    assert "valid" in capsys.readouterr().out


def test_validate_bad_file_exits_one_with_json(tmp_path, capsys):
    bad = [EventSequence((Event(1.0, 0), Event(1.0, 0)), 5.0, 1)]
    path = tmp_path / "bad.jsonl"
    save_jsonl(bad, path)
    assert main(["validate", str(path)]) == 1
    err = capsys.readouterr().err
    payload = json.loads(err)
    assert payload["error"] == "NonMonotoneTimeError"


def test_unknown_flag_usage_error(corpus_file):
    with pytest.raises(SystemExit) as exc:
        main(["validate", str(corpus_file), "--bogus"])
    assert exc.value.code == 2


def test_quantiles_csv(corpus_file, capsys):
    assert main(["quantiles", str(corpus_file)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "percentile,value"
    assert len(lines) == 10
    assert lines[1].startswith("0.050,")
    assert lines[-1].startswith("1.000,")


def test_stats_csv(corpus_file, tmp_path):
    out = tmp_path / "stats.csv"
    assert main(["stats", str(corpus_file), "--out", str(out)]) == 0
    assert out.read_text().startswith("percentile,value")


def test_encode_writes_streams_and_manifest(corpus_file, tmp_path):
    out = tmp_path / "enc"
    args = [
        "encode", "--input", str(corpus_file), "--vocab", str(tmp_path / "v.json"),
        "--compress", "adaptive", "--budget", "512", "--out", str(out),
    ]
    assert main(args) == 0
    streams = sorted(out.glob("stream_*.txt"))
    assert len(streams) == 6
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "encode"
    assert "config_hash" in manifest and "versions" in manifest
    # re-running reproduces byte-identical artifacts
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(args) == 0
    after = {p.name: p.read_bytes() for p in out.iterdir()}
    assert before == after


def test_encode_binary_format(corpus_file, tmp_path):
    out = tmp_path / "encb"
    assert main([
        "encode", "--input", str(corpus_file), "--vocab", str(tmp_path / "v.json"),
        "--format", "binary", "--out", str(out),
    ]) == 0
    assert len(list(out.glob("stream_*.ids"))) == 6


def test_compress_report(corpus_file, capsys):
    assert main(["compress", "--input", str(corpus_file), "--budget", "1024"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("budget,mean_events")
    assert lines[1].startswith("1024,")


def test_fit_and_loglik(corpus_file, tmp_path, capsys):
    model = tmp_path / "model.json"
    assert main([
        "fit", "--variant", "poisson", "--input", str(corpus_file),
        "--out", str(model),
    ]) == 0
    assert model.exists()
    out = tmp_path / "ll.csv"
    assert main([
        "loglik", "--model", str(model), "--input", str(corpus_file),
        "--out", str(out),
    ]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "sequence,n_events,loglik,survival_term"
    assert len(lines) == 7


def test_build_taxi_no_images(tmp_path):
    trips_csv = tmp_path / "trips.csv"
    write_trips_csv(make_synthetic_trips(400, seed=2, n_medallions=8, n_days=2),
                    trips_csv)
    out = tmp_path / "taxi"
    assert main([
        "build-taxi", "--trips", str(trips_csv), "--no-images",
        "--target", "4", "--out", str(out),
    ]) == 0
    assert (out / "sequences.jsonl").exists()
    assert (out / "manifest.json").exists()


def test_full_pipeline_deterministic(tmp_path):
    # build-taxi -> encode -> train -> eval twice; reports must be identical
    trips_csv = tmp_path / "trips.csv"
    write_trips_csv(make_synthetic_trips(300, seed=4, n_medallions=6, n_days=2),
                    trips_csv)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "embed_dim": 32, "n_layers": 1, "n_heads": 2, "context_len": 512,
        "stage1_epochs": 1,
    }))
    reports = []
    for run in ("a", "b"):
        base = tmp_path / run
        assert main([
            "build-taxi", "--trips", str(trips_csv), "--no-images",
            "--target", "3", "--out", str(base / "taxi"),
        ]) == 0
        seqs = base / "taxi" / "sequences.jsonl"
        assert main([
            "encode", "--input", str(seqs), "--vocab", str(base / "v.json"),
            "--compress", "adaptive", "--out", str(base / "enc"),
        ]) == 0
        assert main([
            "train", "--stage", "1", "--config", str(cfg), "--seed", "0",
            "--corpus", str(seqs), "--budget", "512",
            "--out", str(base / "ck"),
        ]) == 0
        out = base / "eval.csv"
        assert main([
            "eval", "--checkpoint", str(base / "ck"), "--test", str(seqs),
            "--budget", "512", "--out", str(out),
        ]) == 0
        blob = out.read_bytes()
        blob += (base / "ck").with_suffix(".bin").read_bytes()
        blob += (base / "taxi" / "sequences.jsonl").read_bytes()
        for p in sorted((base / "enc").glob("stream_*")):
            blob += p.read_bytes()
        reports.append(blob)
    assert reports[0] == reports[1]


def test_train_and_eval_roundtrip(tmp_path):
    from mmtpp.synthetic import alternating_grammar_corpus

    seqs = alternating_grammar_corpus(n_seqs=4, seed=0, n_events=(6, 8))
    corpus = tmp_path / "grammar.jsonl"
    save_jsonl(seqs, corpus)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "embed_dim": 32, "n_layers": 1, "n_heads": 2, "context_len": 256,
        "stage1_epochs": 1, "stage2_epochs": 1,
    }))
    ckpt = tmp_path / "ck"
    assert main([
        "train", "--stage", "1", "--config", str(cfg),
        "--corpus", str(corpus), "--out", str(ckpt),
    ]) == 0
    assert ckpt.with_suffix(".bin").exists()
    assert main([
        "train", "--stage", "2", "--task", "type", "--config", str(cfg),
        "--corpus", str(corpus), "--init", str(ckpt),
        "--out", str(tmp_path / "ck2"),
    ]) == 0
    out = tmp_path / "eval.csv"
    assert main([
        "eval", "--checkpoint", str(tmp_path / "ck2"), "--test", str(corpus),
        "--out", str(out), "--svg", str(tmp_path / "ppl.svg"),
    ]) == 0
    assert out.read_text().startswith("bin_lo,bin_hi,n_streams,ppl")
    assert (tmp_path / "ppl.svg").exists()
    gen_out = tmp_path / "gen.csv"
    assert main([
        "generate", "--task", "type", "--checkpoint", str(tmp_path / "ck2"),
        "--input", str(corpus), "--max-eval", "8", "--out", str(gen_out),
    ]) == 0
    assert gen_out.read_text().startswith("metric,value")

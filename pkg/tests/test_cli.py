import json
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from cpcmal import cli
from cpcmal.featmat import read_features_csv
from cpcmal.harness import budget_to_count
from cpcmal.mal import affinity, default_k, k_medoids, query_plan

DATA = Path(__file__).parent / "data"


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_synth_is_byte_identical(tmp_path):
    assert run("synth", "--out", tmp_path / "a", "--per-blob", 15, "--seed", 4) == 0
    assert run("synth", "--out", tmp_path / "b", "--per-blob", 15, "--seed", 4) == 0
    for name in ("features.csv", "labels.csv", "labelmap.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run("synth", "--out", tmp_path / "c", "--per-blob", 15, "--seed", 5) == 0
    assert (tmp_path / "a/features.csv").read_bytes() != (tmp_path / "c/features.csv").read_bytes()


def test_mal_plan_prints_query_order(tmp_path, capsys):
    run("synth", "--out", tmp_path, "--per-blob", 25, "--dim", 6)
    capsys.readouterr()
    assert run("mal-plan", "--features", tmp_path / "features.csv", "--budget", 5, "--metric", "cosine") == 0
    printed = [int(v) for v in capsys.readouterr().out.split()]
    fm = read_features_csv(tmp_path / "features.csv")
    clusters = k_medoids(affinity(fm.values, "cosine"), default_k(100), seed=0)
    assert printed == query_plan(clusters, budget_to_count(100, 5), seed=0).indices.tolist()


def test_usage_errors_exit_1(capsys):
    assert run("bogus") == 1
    assert "usage" in capsys.readouterr().err
    assert run("selfcheck", "--nope") == 1
    assert run() == 1


def test_malformed_config_names_key(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"datasett": {}}))
    assert run("run", "--config", cfg, "--out", tmp_path / "out") == 1
    assert "datasett" in capsys.readouterr().err
    cfg.write_text("{not json")
    assert run("run", "--config", cfg, "--out", tmp_path / "out") == 1
    assert run("run", "--config", tmp_path / "missing.json", "--out", tmp_path / "out") == 1


def test_internal_error_exit_2(monkeypatch):
    def boom(args):
        raise RuntimeError("bug")

    monkeypatch.setattr(cli, "cmd_selfcheck", boom)
    assert run("selfcheck") == 2


def test_run_matches_golden_report(tmp_path, capsys):
    assert run("run", "--config", DATA / "small_experiment.json", "--out", tmp_path) == 0
    assert (tmp_path / "report.csv").read_text() == (DATA / "golden_small_report.csv").read_text()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["name"] == "small-quadrant-blobs"
    capsys.readouterr()
    assert run("aggregate", "--report", tmp_path / "report.csv", "--summary", tmp_path / "s.csv",
               "--contrasts", tmp_path / "c.csv") == 0
    assert (tmp_path / "s.csv").read_text().startswith("feature,reducer,budget,strategy,n,mean,stderr")
    assert "mean_diff" in (tmp_path / "c.csv").read_text().splitlines()[0]
    assert run("aggregate", "--report", tmp_path / "report.csv", "--by", "budget,strategy") == 0
    assert "budget=100" in capsys.readouterr().out


def test_selfcheck(capsys):
    assert run("selfcheck") == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) >= 7 and all(line.startswith("PASS") for line in lines)


def test_features_from_wavs(tmp_path):
    wavs = tmp_path / "wavs"
    wavs.mkdir()
    t = np.arange(16000) / 16000
    for i, f0 in enumerate((220, 330, 440)):
        wavfile.write(wavs / f"u{i}.wav", 16000, (0.3 * np.sin(2 * np.pi * f0 * t) * 32767).astype(np.int16))
    assert run("features", "--wavs", wavs, "--out", tmp_path / "f.csv") == 0
    fm = read_features_csv(tmp_path / "f.csv")
    assert fm.ids == ["u0", "u1", "u2"] and fm.shape == (3, 600)
    assert run("features", "--wavs", tmp_path / "empty", "--out", tmp_path / "g.csv") == 1


def test_cpc_round_trip(tmp_path, capsys):
    assert run("synth", "--kind", "temporal", "--out", tmp_path, "--n-utterances", 12, "--n-frames", 48,
               "--dim", 40) == 0
    cfg = tmp_path / "cpc.json"
    cfg.write_text(json.dumps({"model": {"enc_dim": 8, "ctx_dim": 8, "enc_layers": 1, "n_steps": 3},
                               "schedule": {"max_epochs": 2, "segment_frames": 24, "batch_size": 4, "lr": 1e-3}}))
    assert run("train-cpc", "--frames", tmp_path / "frames.npz", "--config", cfg, "--out", tmp_path / "m.ckpt",
               "--history", tmp_path / "h.json") == 0
    assert len(json.loads((tmp_path / "h.json").read_text())["val_loss"]) == 2
    assert run("features", "--frames", tmp_path / "frames.npz", "--kind", "cpc", "--model", tmp_path / "m.ckpt",
               "--out", tmp_path / "cpc.csv") == 0
    assert read_features_csv(tmp_path / "cpc.csv").shape == (12, 8)
    assert run("features", "--frames", tmp_path / "frames.npz", "--kind", "cpc", "--out", tmp_path / "x.csv") == 1
    cfg.write_text(json.dumps({"model": {"enc_dimm": 8}}))
    assert run("train-cpc", "--frames", tmp_path / "frames.npz", "--config", cfg, "--out", tmp_path / "m2") == 1
    assert "enc_dimm" in capsys.readouterr().err


def test_reduce(tmp_path):
    run("synth", "--out", tmp_path, "--per-blob", 10, "--dim", 5)
    assert run("reduce", "--features", tmp_path / "features.csv", "--pipeline", "pca2", "--out", tmp_path / "r.csv") == 0
    assert read_features_csv(tmp_path / "r.csv").shape == (40, 2)

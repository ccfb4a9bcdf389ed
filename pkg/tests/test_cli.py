"""CLI plumbing: subcommand wiring, prerequisites, exit codes, idempotence."""
import json
import os
from pathlib import Path

import numpy as np
import pytest

from quarts.cli import main
from quarts import pipeline as P


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny corpus plus a run directory with phases 1-3 completed."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    assert main(["gen-data", "--out", str(data), "--items", "150",
                 "--labeled-pairs", "1200", "--logs-pairs", "400",
                 "--seed", "3"]) == 0
    cfg = ["--config", str(root / "tiny.cfg")]
    (root / "tiny.cfg").write_text(
        "hidden_size = 24\nembed_dim = 24\nbatch_size = 32\nlr = 0.001\n"
        "clf_epochs = 1\nved_epochs = 1\ne2e_epochs = 1\nseed = 3\n")
    base = ["--data-dir", str(data), "--run-dir", str(run)] + cfg
    assert main(["pretrain-classifier"] + base) == 0
    assert main(["build-triples"] + base) == 0
    assert main(["pretrain-ved"] + base) == 0
    return root, data, run, base


class TestGenData:
    def test_writes_all_files(self, workspace):
        _, data, _, _ = workspace
        for name in ["labeled.tsv", "logs.tsv", "catalog.json", "train.tsv",
                     "val.tsv", "test.tsv", "data_manifest.json"]:
            assert (data / name).exists(), name

    def test_manifest_counts(self, workspace):
        _, data, _, _ = workspace
        man = json.loads((data / "data_manifest.json").read_text())
        assert man["counts"]["labeled"] == 1200
        assert man["seed"] == 3


class TestPhases:
    def test_checkpoints_written(self, workspace):
        _, _, run, _ = workspace
        assert (run / P.CKPT_CLASSIFIER).exists()
        assert (run / P.CKPT_TRIPLES).exists()
        assert (run / P.CKPT_VED).exists()
        assert (run / "vocab_q.txt").exists()

    def test_train_e2e_and_eval(self, workspace):
        _, data, run, base = workspace
        assert main(["train-e2e"] + base + ["--p", "0.3"]) == 0
        assert (run / P.CKPT_E2E).exists()
        assert main(["eval"] + base + ["--checkpoint", P.CKPT_E2E]) == 0
        lines = (run / "metrics.jsonl").read_text().strip().splitlines()
        recs = [json.loads(l) for l in lines]
        e2e = [r for r in recs if r["phase"] == "e2e"]
        assert e2e
        for r in e2e:
            for key in ("epoch", "split", "aupr", "f1", "loss", "s1_fraction"):
                assert key in r

    def test_missing_prerequisite_names_prior_command(self, workspace, capsys):
        root, data, _, _ = workspace
        empty_run = root / "empty_run"
        code = main(["train-e2e", "--data-dir", str(data),
                     "--run-dir", str(empty_run)])
        assert code == 2
        assert "pretrain-ved" in capsys.readouterr().err

    def test_eval_missing_data_dir(self, workspace, capsys):
        root, _, run, _ = workspace
        code = main(["eval", "--data-dir", str(root / "nowhere"),
                     "--run-dir", str(run), "--checkpoint", P.CKPT_CLASSIFIER])
        assert code == 2
        assert "gen-data" in capsys.readouterr().err

    def test_unknown_config_key_fails_fast(self, workspace, capsys):
        root, data, run, _ = workspace
        bad = root / "bad.cfg"
        bad.write_text("hiden_size = 24\n")
        code = main(["pretrain-classifier", "--data-dir", str(data),
                     "--run-dir", str(run), "--config", str(bad)])
        assert code == 2
        assert "hiden_size" in capsys.readouterr().err


class TestTools:
    def test_baseline_dssm(self, workspace):
        _, _, run, base = workspace
        assert main(["train-baseline", "--kind", "dssm"] + base) == 0
        assert (run / P.CKPT_DSSM).exists()

    def test_generate_writes_tsv(self, workspace):
        root, _, _, base = workspace
        out = root / "gen.tsv"
        assert main(["generate"] + base + ["--checkpoint", P.CKPT_VED,
                                           "--limit", "4", "--beam", "1",
                                           "--out", str(out)]) == 0
        rows = [l.split("\t") for l in out.read_text().strip().splitlines()]
        assert rows and all(len(r) == 5 for r in rows)

    def test_heatmap_export(self, workspace, capsys):
        root, _, _, base = workspace
        prefix = str(root / "hm")
        assert main(["heatmap"] + base + [
            "--checkpoint", P.CKPT_VED, "--title", "alvora running shoes navy",
            "--query", "insoles for running shoes", "--out", prefix]) == 0
        grid = Path(prefix + ".txt").read_text()
        assert grid.splitlines()[0].split("\t")[1:] == \
            ["alvora", "running", "shoes", "navy"]
        payload = json.loads(Path(prefix + ".json").read_text())
        norm = np.array(payload["normalized"])
        assert norm.shape == (4, 4)
        assert norm.min() >= 0.0 and norm.max() <= 1.0

    def test_knn_runs(self, workspace, capsys):
        _, _, _, base = workspace
        assert main(["knn"] + base + ["--checkpoint", P.CKPT_VED,
                                      "--text", "running shoes",
                                      "--limit", "30"]) == 0
        out = capsys.readouterr().out
        assert "source: running shoes" in out

    def test_scores_dump(self, workspace):
        root, _, _, base = workspace
        out = root / "scores.tsv"
        assert main(["eval"] + base + ["--checkpoint", P.CKPT_CLASSIFIER,
                                       "--scores-out", str(out)]) == 0
        rows = [l.split("\t") for l in out.read_text().strip().splitlines()]
        assert all(len(r) == 2 for r in rows)
        scores = np.array([float(r[0]) for r in rows])
        assert ((scores > 0) & (scores < 1)).all()


class TestRunDirEnv:
    def test_env_var_override(self, workspace, monkeypatch):
        root, data, run, _ = workspace
        monkeypatch.setenv("QUARTS_RUN_DIR", str(run))
        code = main(["eval", "--data-dir", str(data),
                     "--config", str(root / "tiny.cfg"),
                     "--checkpoint", P.CKPT_CLASSIFIER])
        assert code == 0


class TestIdempotence:
    def test_rerun_overwrites_deterministically(self, workspace):
        root, data, _, _ = workspace
        run2 = root / "run2"
        cfg = ["--config", str(root / "tiny.cfg")]
        argv = ["pretrain-classifier", "--data-dir", str(data),
                "--run-dir", str(run2)] + cfg
        assert main(argv) == 0
        first = (run2 / P.CKPT_CLASSIFIER).read_bytes()
        assert main(argv) == 0
        assert (run2 / P.CKPT_CLASSIFIER).read_bytes() == first

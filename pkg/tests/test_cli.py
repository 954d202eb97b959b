import json

import pytest

from carl.cli import main
from carl.synthetic import synthetic_interactions, write_jsonl

SMALL = ["--set", "model.emb_dim=6", "--set", "model.filters=4", "--set", "model.latent=3",
         "--set", "model.fm_factors=2", "--set", "train.batch_size=16"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw = write_jsonl(synthetic_interactions(num_users=12, num_items=9, seed=4), root / "reviews.json")
    assert main(["preprocess", "--input", str(raw), "--out", str(root / "corpus"), "--doc-len", "40"]) == 0
    return root


class TestPreprocess:
    def test_outputs(self, corpus):
        for name in ("vocab.txt", "documents.bin", "splits.csv", "stats.json", "manifest.json"):
            assert (corpus / "corpus" / name).exists()

    def test_same_seed_same_stats(self, corpus, tmp_path, capsys):
        raw = str(corpus / "reviews.json")
        capsys.readouterr()
        main(["preprocess", "--input", raw, "--out", str(tmp_path / "a"), "--seed", "7"])
        first = capsys.readouterr().out
        main(["preprocess", "--input", raw, "--out", str(tmp_path / "b"), "--seed", "7"])
        assert capsys.readouterr().out == first and json.loads(first)["seed"] == 7

    def test_missing_input(self, tmp_path, capsys):
        rc = main(["preprocess", "--input", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")])
        err = capsys.readouterr().err
        assert rc == 2 and "not found" in err and "--help" in err

    def test_usage_error(self, capsys):
        assert main(["preprocess"]) == 1
        assert "usage" in capsys.readouterr().err


class TestTrainEval:
    def test_train_writes_run(self, corpus, tmp_path):
        out = tmp_path / "run"
        rc = main(["train", "--corpus", str(corpus / "corpus"), "--out", str(out), "--epochs", "2", *SMALL])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["train"]["epochs"] == 2 and manifest["workers"] == 1
        assert str(corpus / "corpus") in manifest["inputs"]

    def test_manifest_replay_reproduces(self, corpus, tmp_path):
        first = tmp_path / "first"
        main(["train", "--corpus", str(corpus / "corpus"), "--out", str(first), "--epochs", "2", *SMALL])
        second = tmp_path / "second"
        assert main(["train", "--manifest", str(first / "manifest.json"), "--out", str(second)]) == 0
        assert (first / "model.ckpt").read_bytes() == (second / "model.ckpt").read_bytes()
        a = json.loads((first / "report.json").read_text())
        b = json.loads((second / "report.json").read_text())
        assert a == b and a["test_mse"] == b["test_mse"]

    def test_config_errors_all_listed(self, corpus, capsys):
        rc = main(["train", "--corpus", str(corpus / "corpus"), "--set", "train.lr=-1",
                   "--set", "model.latent=0", "--set", "train.bogus=3"])
        err = capsys.readouterr().err
        assert rc == 1 and "3 configuration error(s)" in err
        for key in ("train.lr", "model.latent", "train.bogus"):
            assert key in err

    def test_workers_env_recorded(self, corpus, tmp_path, monkeypatch):
        monkeypatch.setenv("CARL_WORKERS", "4")
        out = tmp_path / "w"
        main(["train", "--corpus", str(corpus / "corpus"), "--out", str(out), "--epochs", "1", *SMALL])
        assert json.loads((out / "manifest.json").read_text())["workers"] == 4

    def test_grid_two_rows(self, corpus, tmp_path):
        out = tmp_path / "grid"
        rc = main(["grid", "--corpus", str(corpus / "corpus"), "--out", str(out), "--epochs", "1",
                   "--variants", "Review,Rating", "--seeds", "0,1", *SMALL])
        assert rc == 0
        assert len((out / "grid.csv").read_text().splitlines()) == 3

    def test_eval_checkpoint(self, corpus, tmp_path, capsys):
        out = tmp_path / "run"
        main(["train", "--corpus", str(corpus / "corpus"), "--out", str(out), "--epochs", "1", *SMALL])
        capsys.readouterr()
        rc = main(["eval", "--corpus", str(corpus / "corpus"), "--checkpoint", str(out / "model.ckpt")])
        result = json.loads(capsys.readouterr().out)
        report = json.loads((out / "report.json").read_text())
        assert rc == 0 and result["per_seed"] == [report["test_mse"]]

    def test_unknown_variant(self, corpus, capsys):
        rc = main(["train", "--corpus", str(corpus / "corpus"), "--variant", "Magic"])
        assert rc == 1 and "valid names" in capsys.readouterr().err


class TestExplainCommand:
    def test_missing_checkpoint(self, corpus, tmp_path, capsys):
        rc = main(["explain", "--corpus", str(corpus / "corpus"), "--checkpoint", str(tmp_path / "none.ckpt"),
                   "--user", "U0000", "--item", "I0000"])
        assert rc == 2 and "checkpoint not found" in capsys.readouterr().err

    def test_heatmap_files(self, corpus, tmp_path):
        run = tmp_path / "run"
        main(["train", "--corpus", str(corpus / "corpus"), "--out", str(run), "--epochs", "1", *SMALL])
        rc = main(["explain", "--corpus", str(corpus / "corpus"), "--checkpoint", str(run / "model.ckpt"),
                   "--user", "U0000", "--item", "I0000", "--out", str(tmp_path / "maps")])
        assert rc == 0
        for suffix in ("json", "html", "ansi.txt"):
            assert (tmp_path / "maps" / f"heatmap_U0000_I0000.{suffix}").exists()

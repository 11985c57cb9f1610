import json

import pytest

from docmatch.cli import load_config_file, main
from docmatch.documents import load_jsonl
from docmatch.evaluation import EvalReport

TINY_MODEL = [
    "--set", "d=16", "--set", "heads=2", "--set", "n_queries=2",
    "--set", "enc_layers=1", "--set", "dec_layers=1", "--set", "resampler_layers=1",
    "--set", "lr=0.001",
]


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.jsonl"
    assert main(["synth", "--out", str(path), "--count", "6", "--seed", "3"]) == 0
    return path


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, corpus_file):
    ck = tmp_path_factory.mktemp("ck") / "model"
    code = main(
        ["finetune", "--corpus", str(corpus_file), "--out", str(ck),
         "--matcher", "seq", "--steps", "2", "--batch", "3", "--seed", "1", *TINY_MODEL]
    )
    assert code == 0
    return ck


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2
        capsys.readouterr()

    def test_unknown_flag(self, capsys):
        assert main(["synth", "--nope"]) == 2
        capsys.readouterr()

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(
            ["synth", "--out", str(tmp_path / "x.jsonl"), "--count", "1",
             "--config", str(tmp_path / "absent.cfg")]
        )
        assert code == 2
        assert "config file not found" in capsys.readouterr().err

    def test_no_subcommand(self):
        assert main([]) == 2


class TestSynth:
    def test_writes_corpus(self, corpus_file):
        docs = load_jsonl(corpus_file)
        assert len(docs) == 6

    def test_schema_out(self, tmp_path):
        out = tmp_path / "c.jsonl"
        schema = tmp_path / "schema.json"
        assert main(["synth", "--out", str(out), "--count", "2", "--seed", "1",
                     "--schema-out", str(schema)]) == 0
        assert json.loads(schema.read_text())[0]["type"] == "vendor"

    def test_config_file_applies(self, tmp_path):
        cfg = tmp_path / "synth.cfg"
        cfg.write_text("# only tables\nmix_horizontal = 0\nmix_vertical = 0\nmix_table = 1\n")
        out = tmp_path / "t.jsonl"
        assert main(["synth", "--out", str(out), "--count", "4", "--seed", "2",
                     "--config", str(cfg)]) == 0
        assert all(d.doc_id.endswith("table") for d in load_jsonl(out))


class TestTrainEval:
    def test_finetune_writes_checkpoint_and_log(self, checkpoint):
        assert (checkpoint / "params.pt").exists()
        meta = json.loads((checkpoint / "meta.json").read_text())
        assert meta["version"] == 1
        assert meta["meta"]["steps"] == 2
        log_lines = (checkpoint / "train_log.jsonl").read_text().splitlines()
        assert len(log_lines) == 2

    def test_eval_clean(self, checkpoint, corpus_file, tmp_path):
        out = tmp_path / "report.json"
        code = main(["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus_file),
                     "--matcher", "seq", "--condition", "clean", "--out", str(out)])
        assert code == 0
        report = EvalReport.from_json(out.read_text())
        assert report.condition == "clean" and report.doc_count == 6

    def test_eval_shuffled_seq(self, checkpoint, corpus_file, tmp_path):
        out = tmp_path / "report_shuffled.json"
        code = main(["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus_file),
                     "--matcher", "seq", "--condition", "shuffled", "--out", str(out)])
        assert code == 0
        report = EvalReport.from_json(out.read_text())
        assert report.condition == "shuffled"
        assert set(report.per_type) >= {"vendor", "total"}

    def test_pretrain_runs(self, corpus_file, tmp_path):
        ck = tmp_path / "pre"
        code = main(["pretrain", "--corpus", str(corpus_file), "--out", str(ck),
                     "--steps", "2", "--batch", "3", "--seed", "0",
                     "--set", "per_task=1", *TINY_MODEL])
        assert code == 0
        assert (ck / "params.pt").exists()

    def test_finetune_from_init(self, corpus_file, checkpoint, tmp_path):
        out = tmp_path / "ft2"
        code = main(["finetune", "--corpus", str(corpus_file), "--out", str(out),
                     "--init", str(checkpoint), "--matcher", "bio", "--steps", "1",
                     "--batch", "2", "--seed", "5", "--set", "lr=0.0001"])
        assert code == 0


class TestFewshot:
    def test_fewshot_emits_mean_std(self, corpus_file, tmp_path, capsys):
        out = tmp_path / "fewshot.json"
        code = main(["fewshot", "--pool", str(corpus_file), "--eval", str(corpus_file),
                     "--shots", "1,2", "--folds", "2", "--steps", "1", "--batch", "1",
                     "--seed", "0", "--out", str(out), *TINY_MODEL])
        assert code == 0
        results = json.loads(out.read_text())
        assert set(results) == {"1", "2"}
        assert {"mean", "std", "per_fold"} <= set(results["1"])
        printed = capsys.readouterr().out
        assert "1-shot:" in printed and "+/-" in printed


class TestAblate:
    def test_resampler_grid_table(self, corpus_file, tmp_path, capsys):
        out = tmp_path / "ablation.json"
        code = main(["ablate", "--corpus", str(corpus_file), "--eval", str(corpus_file),
                     "--grid", "resampler", "--steps", "1", "--pretrain-steps", "1",
                     "--batch", "3", "--seed", "0", "--set", "per_task=1",
                     "--set", "tasks=sod", "--out", str(out), *TINY_MODEL])
        assert code == 0
        rows = json.loads(out.read_text())
        assert len(rows) == 6
        assert {r["resampler"] for r in rows} == {"par", "vanilla", "none"}
        assert all(r["seed"] == 0 for r in rows)
        assert "status" in capsys.readouterr().out


class TestReport:
    def test_renders_tables_and_plots(self, checkpoint, corpus_file, tmp_path):
        rep = tmp_path / "r.json"
        main(["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus_file),
              "--out", str(rep)])
        outdir = tmp_path / "artifacts"
        code = main(["report", "--reports", str(rep),
                     "--train-log", str(checkpoint / "train_log.jsonl"),
                     "--outdir", str(outdir)])
        assert code == 0
        for name in ("reports.txt", "reports.csv", "f1.png", "loss.png"):
            assert (outdir / name).exists(), name


def test_config_file_parser(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("# comment\nlr = 0.01\n\ntasks = sod,sad\n")
    assert load_config_file(cfg) == {"lr": "0.01", "tasks": "sod,sad"}

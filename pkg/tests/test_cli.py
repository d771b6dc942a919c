import json
import os

import pytest

from suturesim.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def fast_vision_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("""
// fast settings for CLI tests
{
  "vision": {
    "model": "logistic",
    "learning_rate": 0.05,  /* baseline-scale rate */
    "max_epochs": 8,
    "patience": 8,
    "batch_size": 8
  }
}
""")
    return path


class TestSimulate:
    def test_simulate_writes_reports(self, tmp_path):
        out = tmp_path / "runs"
        code = run_cli("simulate", "--runs", "2", "--seed", "7", "--out", str(out))
        assert code == 0
        assert (out / "report_000.json").exists()
        assert (out / "events_001.jsonl").exists()
        assert (out / "summary.json").exists()
        assert (out / "comparison.md").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        report = json.loads((out / "report_000.json").read_text())
        assert report["n_sutures"] == 8
        assert len(report["records"]) == 16

    def test_reports_reproducible(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("simulate", "--runs", "1", "--seed", "3", "--out", str(out_a)) == 0
        assert run_cli("simulate", "--runs", "1", "--seed", "3", "--out", str(out_b)) == 0
        assert ((out_a / "report_000.json").read_bytes()
                == (out_b / "report_000.json").read_bytes())
        assert ((out_a / "events_000.jsonl").read_bytes()
                == (out_b / "events_000.jsonl").read_bytes())

    def test_replay_own_output(self, tmp_path):
        out = tmp_path / "runs"
        assert run_cli("simulate", "--runs", "1", "--seed", "5", "--out", str(out)) == 0
        assert run_cli("replay", str(out / "events_000.jsonl")) == 0

    def test_scenario_faults(self, tmp_path):
        scenario = tmp_path / "scenario.json"
        scenario.write_text(json.dumps(
            {"faults": [100.0, 600.0, 1100.0, 1600.0, 2100.0]}))
        out = tmp_path / "runs"
        assert run_cli("simulate", "--runs", "1", "--seed", "13",
                       "--out", str(out), "--scenario", str(scenario)) == 0
        report = json.loads((out / "report_000.json").read_text())
        assert report["disconnect_count"] == 5
        assert report["excluded_disconnect_s"] == pytest.approx(150.0)


class TestCorpusCommands:
    def test_gen_corpus_and_classify(self, tmp_path):
        corpus = tmp_path / "corpus"
        code = run_cli("gen-corpus", "--seed", "9", "--out", str(corpus),
                       "--counts", "tissue=5,air=4,nitinol=4",
                       "--noise-levels", "0.2")
        assert code == 0
        manifest = json.loads((corpus / "manifest.json").read_text())
        assert len(manifest["entries"]) == 13
        out = tmp_path / "cls"
        assert run_cli("classify", "--corpus", str(corpus),
                       "--out", str(out), "--seed", "9") == 0
        result = json.loads((out / "classification.json").read_text())
        assert result["n"] == 13
        assert result["accuracy"] >= 0.9
        assert set(result["confusion"].keys()) == {"air", "tissue", "nitinol"}

    def test_forty_nine_scan_corpus(self, tmp_path):
        corpus = tmp_path / "corpus49"
        assert run_cli("gen-corpus", "--seed", "11", "--out", str(corpus)) == 0
        manifest = json.loads((corpus / "manifest.json").read_text())
        assert len(manifest["entries"]) == 49

    def test_missing_corpus_is_io_error(self, tmp_path):
        assert run_cli("classify", "--corpus", str(tmp_path / "nope"),
                       "--out", str(tmp_path / "o")) == 3

    def test_threshold_sweep(self, tmp_path):
        corpus = tmp_path / "corpus"
        run_cli("gen-corpus", "--seed", "9", "--out", str(corpus),
                "--counts", "tissue=4,air=3,nitinol=3", "--noise-levels", "0.3")
        out = tmp_path / "cal"
        assert run_cli("calibrate-thresholds", "--corpus", str(corpus),
                       "--out", str(out)) == 0
        sweep = json.loads((out / "threshold_sweep.json").read_text())
        assert sweep["operating_point"]["balanced_accuracy"] > 0.8
        assert len(sweep["roc_tau_rmse"]) > 3


class TestVisionCommands:
    def test_train_and_eval(self, tmp_path, fast_vision_config):
        out = tmp_path / "vision"
        code = run_cli("train-vision", "--pairs", "40", "--ratio", "1.0",
                       "--seed", "6", "--out", str(out),
                       "--config", str(fast_vision_config))
        assert code == 0
        assert (out / "model.pt").exists()
        curve = (out / "curve.csv").read_text().splitlines()
        assert curve[0] == "epoch,loss,val_acc,val_f1"
        metrics = json.loads((out / "vision_metrics.json").read_text())
        assert metrics["split"] == {"train": 32, "val": 4, "test": 4}

        out2 = tmp_path / "eval"
        code = run_cli("eval-vision", "--model", str(out / "model.pt"),
                       "--pairs", "40", "--ratio", "1.0", "--seed", "6",
                       "--out", str(out2), "--config", str(fast_vision_config))
        assert code == 0
        eval_metrics = json.loads((out2 / "eval_metrics.json").read_text())
        assert eval_metrics["test_accuracy"] == metrics["test_accuracy"]


class TestMetricsAndReport:
    def test_metrics_and_report_from_runs(self, tmp_path):
        out = tmp_path / "runs"
        run_cli("simulate", "--runs", "2", "--seed", "7", "--out", str(out))
        metrics_out = tmp_path / "metrics"
        assert run_cli("metrics", "--runs-dir", str(out),
                       "--out", str(metrics_out)) == 0
        summary = json.loads((metrics_out / "metrics_summary.json").read_text())
        assert summary["n_runs"] == 2
        report_out = tmp_path / "report"
        assert run_cli("report", "--runs-dir", str(out),
                       "--out", str(report_out)) == 0
        comparison = json.loads((report_out / "comparison.json").read_text())
        names = [row["name"] for row in comparison["rows"]]
        assert names[-1] == "simulated"
        assert "robot" in names


class TestConfigHandling:
    def test_malformed_config_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_cli("simulate", "--runs", "1", "--config", str(bad),
                       "--out", str(tmp_path / "o")) == 2

    def test_unknown_key_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"no_such_section": 1}')
        assert run_cli("simulate", "--runs", "1", "--config", str(bad),
                       "--out", str(tmp_path / "o")) == 2

    def test_comments_stripped(self, tmp_path):
        cfg = tmp_path / "ok.json"
        cfg.write_text('{\n  // the master seed\n  "seed": 77 /* inline */\n}')
        out = tmp_path / "o"
        assert run_cli("simulate", "--runs", "1", "--config", str(cfg),
                       "--out", str(out)) == 0
        report = json.loads((out / "report_000.json").read_text())
        assert report["seed"] == 77

    def test_env_seed_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SUTURESIM_SEED", "123")
        out = tmp_path / "o"
        assert run_cli("simulate", "--runs", "1", "--out", str(out)) == 0
        report = json.loads((out / "report_000.json").read_text())
        assert report["seed"] == 123

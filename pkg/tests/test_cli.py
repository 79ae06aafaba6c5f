"""
Tests for the dhat command-line interface.
"""

import argparse
import io
import json
import os

import pytest

from dynamic_hat.app_core import artifacts
from dynamic_hat.cli import build_parser, run_subcommand, validate_config_command
from dynamic_hat.design_space import FEATURE_NAMES, DesignSpace, SubConfig, smallest_config
from dynamic_hat.elastic_model import save_checkpoint
from dynamic_hat.latency import CostModel, LatencyPredictor
from dynamic_hat.runtime import OperatingLibrary, OperatingPoint


@pytest.fixture(autouse=True)
def in_tmp_dir(tmp_path, monkeypatch):
    """Run every command from a scratch directory (activity log, default dhat.ini)."""
    for key in list(os.environ):
        if key.startswith("DHAT_") and key != "DHAT_LOG_LEVEL":
            monkeypatch.delenv(key)
    monkeypatch.chdir(tmp_path)
    return tmp_path


def stdout_records(captured):
    return [json.loads(line) for line in captured.out.splitlines() if line.startswith("{")]


def stderr_record(captured):
    lines = [line for line in captured.err.splitlines() if line.startswith("{")]
    assert lines, captured.err
    return json.loads(lines[-1])


class TestParser:
    """Argument parsing."""

    def test_subcommand_required(self, capsys):
        """No subcommand exits with argparse's usage status."""
        assert run_subcommand([]) == 2

    def test_unknown_subcommand(self, capsys):
        """An unknown subcommand is a usage error."""
        assert run_subcommand(["teleport"]) != 0

    def test_version(self, capsys):
        """--version prints and exits 0."""
        assert run_subcommand(["--version"]) == 0
        assert "Dynamic-HAT" in capsys.readouterr().out

    def test_every_flag_documented(self):
        """Each option of every subcommand carries help text."""
        parser = build_parser()
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        missing = [
            f"{name} {action.option_strings or action.dest}"
            for name, sub in subparsers.choices.items()
            for action in sub._actions
            if not action.help
        ]
        assert missing == []

    def test_latency_warmup_flag(self):
        """--latency-warmup and --warmup map to different settings."""
        args = build_parser().parse_args(["search", "--space", "s", "--predictor", "p", "--constraints", "5",
                                          "--out", "o", "--latency-warmup", "3"])
        assert args.warmup == 3
        args = build_parser().parse_args(["train-super", "--space", "s", "--corpus", "c", "--out", "o",
                                          "--warmup", "10"])
        assert args.warmup == 10


class TestValidateConfig:
    """validate-config exit codes."""

    def test_valid_config(self, tmp_path, capsys):
        """A clean file exits 0."""
        path = tmp_path / "dhat.ini"
        path.write_text("[meta]\nversion = 1\n[train]\nsteps = 100\n", encoding="utf-8")
        assert validate_config_command(str(path)) == 0
        assert "Configuration is valid." in capsys.readouterr().out

    def test_config_with_errors(self, tmp_path, capsys):
        """Range errors exit 1."""
        path = tmp_path / "dhat.ini"
        path.write_text("[meta]\nversion = 1\n[latency]\ntrim = 0.7\n", encoding="utf-8")
        assert validate_config_command(str(path)) == 1
        assert "ERROR 1." in capsys.readouterr().out

    def test_warnings_only(self, tmp_path, capsys):
        """Warnings alone still exit 0."""
        path = tmp_path / "dhat.ini"
        path.write_text("[latency]\nrepeats = 100\n", encoding="utf-8")
        assert validate_config_command(str(path)) == 0
        assert "warnings can be ignored" in capsys.readouterr().out

    def test_missing_file(self, tmp_path, capsys):
        """A missing file exits 2."""
        assert validate_config_command(str(tmp_path / "absent.ini")) == 2

    def test_subcommand_uses_global_config(self, tmp_path, capsys):
        """Without a path the --config file is validated."""
        path = tmp_path / "other.ini"
        path.write_text("[meta]\nversion = 1\n", encoding="utf-8")
        assert run_subcommand(["--config", str(path), "validate-config"]) == 0


class TestSteps:
    """Individual pipeline steps."""

    def test_init_space(self, tmp_path, capsys):
        """init-space writes the preset and reports its size."""
        assert run_subcommand(["init-space", "--preset", "desk", "--out", "space.json"]) == 0
        record = stdout_records(capsys.readouterr())[-1]
        assert record["preset"] == "desk"
        assert artifacts.load_space(tmp_path / "space.json") == DesignSpace.desk()
        assert (tmp_path / "activity.jsonl").exists()

    def test_gen_corpus(self, tmp_path, capsys):
        """gen-corpus writes three splits with their vocab files."""
        code = run_subcommand(["gen-corpus", "--out-dir", "data", "--vocab-size", "12", "--n-train", "20",
                               "--n-valid", "5", "--n-test", "5", "--min-len", "2", "--max-len", "4"])
        assert code == 0
        train = artifacts.load_corpus(tmp_path / "data" / "train.jsonl")
        assert len(train) == 20 and train.vocab_size == 12
        assert (tmp_path / "data" / "test.vocab.json").exists()

    def test_invalid_corpus_flags(self, capsys):
        """Invalid settings exit 1 with a JSON error line on stderr."""
        assert run_subcommand(["gen-corpus", "--out-dir", "data", "--vocab-size", "4"]) == 1
        assert stderr_record(capsys.readouterr())["error"] == "InvalidSettingError"

    def test_missing_artifact(self, capsys):
        """A missing input file exits 1 naming the file."""
        assert run_subcommand(["fit-predictor", "--dataset", "absent.jsonl", "--out", "p.json"]) == 1
        record = stderr_record(capsys.readouterr())
        assert record["error"] == "ArtifactLoadError"
        assert record["context"]["file_path"].endswith("absent.jsonl")

    def test_real_hardware_needs_bank(self, tmp_path, tiny_space, capsys):
        """collect-latency on real hardware without a bank is rejected."""
        artifacts.save_space(tiny_space, tmp_path / "space.json")
        code = run_subcommand(["collect-latency", "--space", "space.json", "--hardware", "real", "--out", "l.jsonl"])
        assert code == 1

    def test_collect_and_fit(self, tmp_path, tiny_space, capsys):
        """Simulated latency collection feeds the predictor fit."""
        artifacts.save_space(tiny_space, tmp_path / "space.json")
        assert run_subcommand(["collect-latency", "--space", "space.json", "--hardware", "sim-cpu",
                               "--n-samples", "40", "--repeats", "5", "--latency-warmup", "0",
                               "--workers", "2", "--out", "lat.jsonl"]) == 0
        assert run_subcommand(["fit-predictor", "--dataset", "lat.jsonl", "--out", "pred.json"]) == 0
        records = stdout_records(capsys.readouterr())
        assert records[0]["n_samples"] == 40
        assert records[1]["holdout_rmse_ms"] < 1.0

    def test_search_val_loss_needs_bank(self, tmp_path, tiny_space, capsys):
        """val-loss fitness without a bank is rejected."""
        artifacts.save_space(tiny_space, tmp_path / "space.json")
        intercept, coefs = CostModel.preset("sim-gpu", tiny_space).feature_coefficients(tiny_space.encoder_layers)
        artifacts.save_predictor(LatencyPredictor(intercept, coefs), tmp_path / "pred.json")
        code = run_subcommand(["search", "--space", "space.json", "--predictor", "pred.json",
                               "--constraints", "500", "--out", "lib.json"])
        assert code == 1
        assert stderr_record(capsys.readouterr())["context"]["config_key"] == "fitness"

    def test_bad_constraints(self, tmp_path, tiny_space, capsys):
        """Non-numeric constraints are rejected."""
        artifacts.save_space(tiny_space, tmp_path / "space.json")
        artifacts.save_predictor(LatencyPredictor(1.0, [0.0] * len(FEATURE_NAMES)), tmp_path / "pred.json")
        code = run_subcommand(["search", "--space", "space.json", "--predictor", "pred.json",
                               "--constraints", "fast,slow", "--fitness", "surrogate", "--out", "lib.json"])
        assert code == 1

    def test_reduce_space(self, tmp_path, tiny_space, capsys):
        """Reducing to configs that never use the wide embedding drops it."""
        artifacts.save_space(tiny_space, tmp_path / "space.json")
        narrow = [
            SubConfig(8, 8, (16, 32), (2, 4), 2, (32, 16), (4, 2), (-1, 1)),
            SubConfig(8, 8, (32, 32), (2, 2), 3, (16, 16, 32), (2, 2, 2), (1, 1, -1)),
        ]
        library = OperatingLibrary([OperatingPoint(c, 100.0 + i, 4.0 + i) for i, c in enumerate(narrow)])
        artifacts.save_library(library, tmp_path / "lib.json")
        assert run_subcommand(["reduce-space", "--space", "space.json", "--library", "lib.json",
                               "--out", "reduced.json"]) == 0
        reduced = artifacts.load_space(tmp_path / "reduced.json")
        assert reduced.encoder_embed_choices == (8,)
        assert reduced.decoder_embed_choices == (8,)
        record = stdout_records(capsys.readouterr())[-1]
        assert record["cardinality_after"] < record["cardinality_before"]

    def test_evaluate(self, tmp_path, tiny_bank, small_valid, capsys):
        """evaluate prints BLEU, accuracy and loss for one config."""
        save_checkpoint(tiny_bank, tmp_path / "bank.ckpt")
        artifacts.save_config(smallest_config(tiny_bank.space), tmp_path / "cfg.json")
        artifacts.save_corpus(small_valid, tmp_path / "valid.jsonl")
        assert run_subcommand(["evaluate", "--bank", "bank.ckpt", "--config-file", "cfg.json",
                               "--corpus", "valid.jsonl"]) == 0
        record = stdout_records(capsys.readouterr())[-1]
        assert 0.0 <= record["bleu"] <= 100.0
        assert record["n_sentences"] == len(small_valid)

    def test_train_super_small(self, tmp_path, tiny_space, small_corpus, capsys):
        """train-super writes a checkpoint and a training log."""
        artifacts.save_space(tiny_space, tmp_path / "space.json")
        artifacts.save_corpus(small_corpus, tmp_path / "train.jsonl")
        assert run_subcommand(["train-super", "--space", "space.json", "--corpus", "train.jsonl",
                               "--valid", "train.jsonl", "--out", "bank.ckpt", "--log", "log.jsonl",
                               "--steps", "3", "--batch-size", "4"]) == 0
        record = stdout_records(capsys.readouterr())[-1]
        assert record["steps"] == 3
        assert "valid_loss_largest" in record
        assert (tmp_path / "bank.ckpt").exists()
        assert len((tmp_path / "log.jsonl").read_text(encoding="utf-8").splitlines()) == 3


class TestRuntimeAndReport:
    """run and report subcommands."""

    def test_run_session(self, tmp_path, depth_bank, gpu_library, monkeypatch, capsys):
        """Commands on stdin are answered on stdout."""
        save_checkpoint(depth_bank, tmp_path / "bank.ckpt")
        artifacts.save_library(gpu_library, tmp_path / "lib.json")
        monkeypatch.setattr("sys.stdin", io.StringIO("set-constraint 700\ntranslate 4 5 6\nstats\nquit\n"))
        assert run_subcommand(["run", "--bank", "bank.ckpt", "--library", "lib.json"]) == 0
        records = stdout_records(capsys.readouterr())
        assert [r["event"] for r in records] == ["constraint", "translation", "stats", "quit"]
        assert records[0]["n_decoder_layers"] == 2
        assert not (tmp_path / "activity.jsonl").exists()

    def test_run_events_not_duplicated(self, tmp_path, depth_bank, gpu_library, monkeypatch, capsys):
        """With --events each controller event is printed once, first_request included."""
        save_checkpoint(depth_bank, tmp_path / "bank.ckpt")
        artifacts.save_library(gpu_library, tmp_path / "lib.json")
        monkeypatch.setattr("sys.stdin", io.StringIO("set-constraint 700\nset-constraint 1600\ntranslate 4 5 6\nquit\n"))
        assert run_subcommand(["run", "--bank", "bank.ckpt", "--library", "lib.json", "--events"]) == 0
        records = stdout_records(capsys.readouterr())
        assert [r["event"] for r in records] == [
            "init", "constraint", "constraint", "first_request", "translation", "quit"]
        assert [r["n_decoder_layers"] for r in records[1:4]] == [2, 6, 6]
        assert records[3]["first_request_ms"] is not None

    def test_report_to_file(self, tmp_path, gpu_library, capsys):
        """report writes the Markdown table."""
        artifacts.save_library(gpu_library, tmp_path / "lib.json")
        assert run_subcommand(["report", "--library", "lib.json", "--title", "GPU", "--out", "out/report.md"]) == 0
        text = (tmp_path / "out" / "report.md").read_text(encoding="utf-8")
        assert text.startswith("# GPU")
        assert "1526.54" in text


@pytest.mark.slow
class TestPipeline:
    """End-to-end runs on simulated hardware."""

    def run_pipeline(self, out_dir):
        return run_subcommand(["pipeline", "--out-dir", out_dir, "--preset", "desk", "--hardware", "sim-gpu",
                               "--fitness", "surrogate", "--steps", "2", "--constraints", "500,1000,1500"])

    def test_pipeline_is_deterministic(self, tmp_path, capsys):
        """Two runs give the same library and a complete manifest."""
        assert self.run_pipeline("run_a") == 0
        assert self.run_pipeline("run_b") == 0
        manifest = artifacts.load_manifest(tmp_path / "run_a" / "manifest.json")
        assert manifest.missing() == []
        a = artifacts.load_library(tmp_path / "run_a" / "library.json")
        b = artifacts.load_library(tmp_path / "run_b" / "library.json")
        assert a.to_dict() == b.to_dict()
        assert len(a) >= 1
        for point in a:
            assert point.measured_latency_ms <= point.constraint_ms + 1e-6

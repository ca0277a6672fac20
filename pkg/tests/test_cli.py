"""Run configuration round trip and CLI subcommand behaviour."""

import json

import numpy as np
import pytest

from convtransseg.cli import dispatch
from convtransseg.errors import ConfigurationError
from convtransseg.runconfig import RunConfig, parse_run_config, render_run_config


class TestRunConfig:
    def test_parse_render_round_trip(self):
        cfg = RunConfig(input_size=64, classes=3, base_channels=16, lr=3e-4,
                        use_skip=False, mask_empty=True, data="d/", out="o/")
        assert parse_run_config(render_run_config(cfg)) == cfg

    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert parse_run_config(render_run_config(cfg)) == cfg

    def test_comments_and_overrides(self):
        text = "# comment\ninput_size = 64  # trailing\nclasses = 3\n"
        cfg = parse_run_config(text, overrides={"classes": 4, "lr": None})
        assert cfg.input_size == 64 and cfg.classes == 4 and cfg.lr == 1e-4

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown config key"):
            parse_run_config("nonsense = 3\n")


class TestCli:
    def test_no_arguments_usage_exit_2(self, capsys):
        assert dispatch([]) == 2

    def test_unknown_subcommand_exit_2(self):
        assert dispatch(["frobnicate"]) == 2

    def test_analyze_reference_row(self, capsys):
        rc = dispatch(["analyze", "--input-size", "256", "--downsample", "4"])
        out = capsys.readouterr().out
        assert rc == 0
        # level 2 of the 256 reference instance: 64x64x256 map -> 1024x256 tokens
        row = [ln for ln in out.splitlines() if ln.startswith("2 ")][0]
        assert "64x64" in row and "256" in row and "1024" in row

    def test_analyze_reports_reference_total(self, capsys):
        rc = dispatch(["analyze"])  # defaults: 224, C_base 64, m 8, classes 2
        out = capsys.readouterr().out
        assert rc == 0
        assert "21,480,074" in out and "21.48M" in out

    def test_analyze_json_round_trips(self, capsys):
        rc = dispatch(["analyze", "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["total_params"] == 21_480_074
        cfg = RunConfig(**payload["config"])
        assert cfg == RunConfig()

    def test_analyze_invalid_config_exit_1(self, capsys):
        rc = dispatch(["analyze", "--input-size", "100"])
        assert rc == 1
        assert "divisible" in capsys.readouterr().err

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("input_size = 64\nbase_channels = 16\ndownsample = 4\n")
        rc = dispatch(["analyze", "--config", str(cfg_file), "--json", "--base-channels", "32"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["config"]["input_size"] == 64
        assert payload["config"]["base_channels"] == 32

    def test_full_pipeline_synth_train_eval_compare(self, tmp_path, capsys):
        data = tmp_path / "data"
        run = tmp_path / "run"
        assert dispatch(["synth", "--count", "12", "--size", "32", "--classes", "2",
                         "--seed", "7", "--out", str(data)]) == 0
        rc = dispatch([
            "train", "--data", str(data), "--out", str(run),
            "--input-size", "32", "--base-channels", "8", "--downsample", "2",
            "--blocks", "1", "--epochs", "1", "--batch", "4", "--seed", "7",
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "best checkpoint" in out
        ckpt = run / "best.ckpt"
        assert ckpt.exists() and (run / "train_log.csv").exists()

        report_a = tmp_path / "a.csv"
        report_b = tmp_path / "b.csv"
        assert dispatch(["eval", str(ckpt), "--data", str(data), "--split", "train",
                         "--out", str(report_a)]) == 0
        assert dispatch(["eval", str(ckpt), "--data", str(data), "--split", "train",
                         "--out", str(report_b)]) == 0
        capsys.readouterr()
        # identical reports: every paired difference is zero, so the test
        # cannot run; that is a data error (exit 1), not a crash
        assert dispatch(["compare", str(report_a), str(report_b)]) == 1
        assert "nonzero differences" in capsys.readouterr().err

    def test_compare_detects_direction(self, tmp_path, capsys):
        import io
        from convtransseg.metrics import EvalReport, evaluate
        from convtransseg.rng import RngState
        rng = RngState(1)
        gts = [(rng.uniform((16, 16)) < 0.35).astype(np.int64) for _ in range(12)]
        noisy = [np.clip(g - (rng.uniform((16, 16)) < 0.4), 0, 1).astype(np.int64) for g in gts]
        a_path, b_path = tmp_path / "a.csv", tmp_path / "b.csv"
        evaluate(gts, gts, classes=2).to_csv(a_path)
        evaluate(noisy, gts, classes=2).to_csv(b_path)
        assert dispatch(["compare", str(a_path), str(b_path)]) == 0
        out = capsys.readouterr().out
        assert "p_dc" in out and "class=1" in out

    def test_gradcheck_subcommand(self, capsys):
        assert dispatch(["gradcheck", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["tiny_model"]["passed"]
        assert all(entry["passed"] for entry in payload.values())

    def test_eval_writes_parseable_csv_to_stdout(self, tmp_path, capsys):
        from convtransseg.metrics import EvalReport
        data = tmp_path / "data"
        run = tmp_path / "run"
        dispatch(["synth", "--count", "10", "--size", "32", "--classes", "2",
                  "--seed", "3", "--out", str(data)])
        dispatch(["train", "--data", str(data), "--out", str(run),
                  "--input-size", "32", "--base-channels", "8", "--downsample", "2",
                  "--blocks", "1", "--epochs", "1", "--batch", "4", "--seed", "3"])
        capsys.readouterr()
        assert dispatch(["eval", str(run / "best.ckpt"), "--data", str(data),
                         "--split", "test"]) == 0
        captured = capsys.readouterr()
        import io as _io
        report = EvalReport.from_csv(_io.StringIO(captured.out))
        assert report.entries

"""Tests for the command-line interface: outputs, artifacts, exit codes."""

import json

import numpy as np
import pytest

from fuselab.cli import main
from fuselab.prompt import load_prompt


@pytest.fixture()
def tiny_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "n_blocks": 2,
                "d_model": 16,
                "d_in": 8,
                "rank": 2,
                "n_train": 64,
                "n_test": 32,
                "steps": 6,
                "batch_size": 4,
                "seed": 3,
            }
        )
    )
    return path


class TestFlopsCommand:
    def test_table_output(self, capsys):
        assert main(["flops", "--L", "256", "--N", "320", "--d", "4096"]) == 0
        out = capsys.readouterr().out
        assert "19,998,441,472" in out
        assert "671,088,640" in out
        assert "29.8000" in out

    def test_json_output(self, capsys):
        assert main(["flops", "--L", "2", "--N", "3", "--d", "4", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["flops_param_free"] == 2 * 2 * 3 * 4
        assert payload["ratio"]["float"] > 1

    def test_bench_records_timings(self, capsys):
        assert main(["flops", "--L", "4", "--N", "4", "--d", "8", "--bench", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload["measured_ns"]) == {"standard", "param_free"}

    def test_invalid_dims_structured_error(self, capsys):
        assert main(["flops", "--L", "0", "--N", "3", "--d", "4"]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ValueError"
        assert err["command"] == "flops"


class TestGradcheckCommand:
    def test_passes(self, capsys):
        assert main(["gradcheck", "--trials", "3"]) == 0
        out = capsys.readouterr().out
        assert "gradcheck PASS" in out
        assert out.count("trial") == 3


class TestTrainCommand:
    def test_writes_artifacts(self, tiny_config_file, tmp_path, capsys):
        out_dir = tmp_path / "run"
        assert main(["train", "--config", str(tiny_config_file), "--out", str(out_dir)]) == 0
        stdout = capsys.readouterr().out
        assert "final test accuracy" in stdout
        report = json.loads((out_dir / "report.json").read_text())
        assert report["seed"] == 3
        assert len(report["losses"]) == 6
        assert (out_dir / "checkpoint" / "manifest.json").exists()

    def test_env_seed_overrides_config(self, tiny_config_file, tmp_path, monkeypatch):
        monkeypatch.setenv("ADEMVL_SEED", "11")
        out_dir = tmp_path / "run-env"
        assert main(["train", "--config", str(tiny_config_file), "--out", str(out_dir)]) == 0
        assert json.loads((out_dir / "report.json").read_text())["seed"] == 11

    def test_bad_env_seed_is_structured_error(self, tiny_config_file, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("ADEMVL_SEED", "not-a-number")
        assert main(["train", "--config", str(tiny_config_file), "--out", str(tmp_path / "x")]) == 1
        err = json.loads(capsys.readouterr().err)
        assert "ADEMVL_SEED" in err["message"]

    def test_missing_config_file(self, capsys):
        assert main(["train", "--config", "/no/such/file.json"]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"


class TestAblateCommand:
    def test_placement_sweep_writes_reports(self, tiny_config_file, tmp_path, capsys):
        out_dir = tmp_path / "sweep"
        code = main(
            [
                "ablate",
                "--axis",
                "placement",
                "--config",
                str(tiny_config_file),
                "--steps",
                "2",
                "--out",
                str(out_dir),
            ]
        )
        assert code == 0
        table = capsys.readouterr().out
        assert table.count("->") >= 6  # one placement label per row
        payload = json.loads((out_dir / "ablate_placement.json").read_text())
        assert len(payload) == 6
        assert all(p["error"] is None for p in payload)

    def test_projection_sweep_prints_ordering_note(self, tiny_config_file, capsys):
        code = main(["ablate", "--axis", "projection", "--config", str(tiny_config_file), "--steps", "2"])
        assert code == 0
        assert "projection ordering" in capsys.readouterr().out

    def test_unknown_axis_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["ablate", "--axis", "dropout"])
        assert err.value.code == 2


class TestHeatmapCommand:
    def test_reads_checkpoint_and_writes_grids(self, tiny_config_file, tmp_path, capsys):
        run_dir = tmp_path / "run"
        assert main(["train", "--config", str(tiny_config_file), "--out", str(run_dir)]) == 0
        capsys.readouterr()
        hm_dir = tmp_path / "hm"
        code = main(
            ["heatmap", "--checkpoint", str(run_dir / "checkpoint"), "--samples", "16", "--out", str(hm_dir)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "mean keep frequency 0.800000000000" in out
        grid = np.array(
            [
                [float(v) for v in line.split(",")]
                for line in (hm_dir / "heatmap_scale1.csv").read_text().strip().splitlines()
            ]
        )
        assert grid.shape == (16, 16)
        payload = json.loads((hm_dir / "heatmap.json").read_text())
        assert payload["gamma"] == 0.2

    def test_missing_checkpoint_structured_error(self, capsys):
        assert main(["heatmap", "--checkpoint", "/no/such/ckpt"]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"


class TestDumpPromptCommand:
    def test_prints_summary_and_saves(self, tmp_path, capsys):
        out = tmp_path / "prompt.admt"
        assert main(["dump-prompt", "--seed", "5", "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "320 rows" in stdout
        prompt = load_prompt(out)
        assert prompt.n_rows == 320
        assert prompt.scales == (1, 2)

    def test_env_seed_override(self, capsys, monkeypatch):
        monkeypatch.setenv("ADEMVL_SEED", "9")
        assert main(["dump-prompt", "--seed", "5"]) == 0
        assert "seed 9" in capsys.readouterr().out

    def test_custom_scales(self, capsys):
        assert main(["dump-prompt", "--seed", "0", "--scales", "1", "4"]) == 0
        assert "272 rows" in capsys.readouterr().out


class TestUsageErrors:
    def test_no_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2

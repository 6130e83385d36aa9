"""End-to-end command-line tests (tiny configs; everything in-process except
one smoke test of the installed entry point)."""

from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest

from paramcrop.cli import main, render_svg
from paramcrop.errors import ConfigError
from paramcrop.kv import format_kv, parse_kv
from paramcrop.simulator import CSV_HEADER, MetricsRecord

TINY_CONFIG = """\
# desk-scale smoke configuration
steps = 3
batch_size = 2
input_shape = 2x8x10x10
crop_shape = 4x5x5
embed_dim = 8
conv_channels = 4
noise_dim = 6
hidden_dim = 8
probe_samples = 8
seed = 5
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return path


class TestKvFormat:
    def test_parse_basics(self):
        text = "a = 1\n\n# comment\nb=two words\n"
        assert parse_kv(text) == {"a": "1", "b": "two words"}

    def test_round_trip(self):
        pairs = {"alpha": "0.5", "name": "x y", "count": "7"}
        assert parse_kv(format_kv(pairs)) == pairs

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_kv("a = 1\na = 2\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_kv("a = 1\nnot a pair\n")

    def test_empty_key(self):
        with pytest.raises(ConfigError, match="empty key"):
            parse_kv("= 3\n")


class TestTrain:
    def test_writes_metrics_and_manifest(self, tmp_path, config_path, capsys):
        out = tmp_path / "run"
        code = main(["train", "--config", str(config_path), "--out", str(out)])
        assert code == 0
        csv_text = (out / "metrics.csv").read_text()
        lines = csv_text.splitlines()
        assert lines[0] == CSV_HEADER
        assert len(lines) == 1 + 3
        manifest = parse_kv((out / "manifest.txt").read_text())
        assert manifest["command"] == "train"
        assert manifest["steps"] == "3"
        assert manifest["metrics_csv"] == "metrics.csv"
        stdout = capsys.readouterr().out
        assert "probe iou=" in stdout
        assert "final iou=" in stdout

    def test_rerun_is_byte_identical(self, tmp_path, config_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(config_path),
                     "--out", str(out_a)]) == 0
        assert main(["train", "--config", str(config_path),
                     "--out", str(out_b)]) == 0
        assert (out_a / "metrics.csv").read_bytes() == \
            (out_b / "metrics.csv").read_bytes()

    def test_seed_override_changes_output(self, tmp_path, config_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["train", "--config", str(config_path), "--out", str(out_a)])
        main(["train", "--config", str(config_path), "--out", str(out_b),
              "--seed", "99"])
        assert (out_a / "metrics.csv").read_text() != \
            (out_b / "metrics.csv").read_text()
        manifest = parse_kv((out_b / "manifest.txt").read_text())
        assert manifest["seed"] == "99"

    def test_from_manifest_reproduces_run(self, tmp_path, config_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["train", "--config", str(config_path), "--out", str(out_a)])
        code = main(["train", "--from-manifest", str(out_a / "manifest.txt"),
                     "--out", str(out_b)])
        assert code == 0
        assert (out_a / "metrics.csv").read_bytes() == \
            (out_b / "metrics.csv").read_bytes()

    def test_print_config_shows_effective_values(self, config_path, capsys):
        code = main(["train", "--config", str(config_path), "--print-config"])
        assert code == 0
        pairs = parse_kv(capsys.readouterr().out)
        assert pairs["steps"] == "3"
        assert pairs["strategy"] == "paramcrop"
        assert "cropper_lr" in pairs

    def test_plot_writes_svg(self, tmp_path, config_path):
        out = tmp_path / "run"
        main(["train", "--config", str(config_path), "--out", str(out),
              "--plot"])
        svg = (out / "metrics.svg").read_text()
        assert svg.startswith("<svg")
        assert "polyline" in svg
        assert "dist_norm" in svg

    def test_defaults_used_without_config(self, capsys):
        code = main(["train", "--print-config"])
        assert code == 0
        pairs = parse_kv(capsys.readouterr().out)
        assert pairs["steps"] == "2000"


class TestErrorPaths:
    def test_unknown_config_key_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("warp_factor = 9\n")
        assert main(["train", "--config", str(bad)]) == 2

    def test_invalid_value_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("steps = -5\n")
        assert main(["train", "--config", str(bad)]) == 2

    def test_missing_config_file_exits_4(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 4

    def test_unknown_strategy_exits_2(self, tmp_path, config_path):
        code = main(["compare", "--config", str(config_path),
                     "--out", str(tmp_path / "c"),
                     "--strategies", "paramcrop,teleport"])
        assert code == 2

    def test_bad_bounds_exit_2(self, tmp_path, config_path):
        code = main(["sweep-detach", "--config", str(config_path),
                     "--out", str(tmp_path / "s"), "--bounds", "0.0,wide"])
        assert code == 2
        code = main(["sweep-detach", "--config", str(config_path),
                     "--out", str(tmp_path / "s"), "--bounds", "0.9"])
        assert code == 2

    def test_bad_thread_env_exits_2(self, tmp_path, config_path, monkeypatch):
        monkeypatch.setenv("PARAMCROP_THREADS", "zero")
        code = main(["compare", "--config", str(config_path),
                     "--out", str(tmp_path / "c"),
                     "--strategies", "simple,hard"])
        assert code == 2


class TestCompare:
    def test_writes_combined_csv(self, tmp_path, config_path, capsys):
        out = tmp_path / "cmp"
        code = main(["compare", "--config", str(config_path),
                     "--out", str(out), "--strategies", "simple,hard"])
        assert code == 0
        lines = (out / "compare.csv").read_text().splitlines()
        assert lines[0] == "strategy," + CSV_HEADER
        assert len(lines) == 1 + 2 * 3
        assert lines[1].startswith("simple,0,")
        assert lines[4].startswith("hard,0,")
        manifest = parse_kv((out / "manifest.txt").read_text())
        assert manifest["strategies"] == "simple,hard"
        assert "simple: final iou=" in capsys.readouterr().out

    def test_thread_pool_matches_serial(self, tmp_path, config_path,
                                        monkeypatch):
        serial, pooled = tmp_path / "s", tmp_path / "p"
        main(["compare", "--config", str(config_path), "--out", str(serial),
              "--strategies", "simple,random"])
        monkeypatch.setenv("PARAMCROP_THREADS", "2")
        main(["compare", "--config", str(config_path), "--out", str(pooled),
              "--strategies", "simple,random"])
        assert (serial / "compare.csv").read_bytes() == \
            (pooled / "compare.csv").read_bytes()


class TestSweepDetach:
    def test_writes_summary_rows(self, tmp_path, config_path):
        out = tmp_path / "sweep"
        code = main(["sweep-detach", "--config", str(config_path),
                     "--out", str(out), "--bounds", "0.0,0.5"])
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "b_detach,probe_iou,probe_dist_norm,last_iou,last_dist_norm"
        assert len(lines) == 3
        assert lines[1].startswith("0,")
        assert lines[2].startswith("0.5,")


class TestGradcheckCommand:
    def test_single_seed_passes(self, capsys):
        code = main(["gradcheck", "--seeds", "1"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 7
        assert "FAIL" not in out

    def test_unreachable_tolerance_exits_3(self, capsys):
        code = main(["gradcheck", "--seeds", "1", "--tolerance", "1e-18"])
        assert code == 3
        assert "FAIL" in capsys.readouterr().out


class TestSvg:
    def test_nan_rows_are_skipped(self):
        records = [
            MetricsRecord(step=0, loss=1.0, iou=np.nan, dist_raw=np.nan,
                          dist_norm=np.nan, unit_mean=np.full(6, 0.5)),
            MetricsRecord(step=1, loss=0.9, iou=np.nan, dist_raw=np.nan,
                          dist_norm=np.nan, unit_mean=np.full(6, 0.5)),
        ]
        svg = render_svg(records, total_steps=2)
        assert svg.count("<polyline") == 1  # only the loss panel has points
        assert "nan" not in svg


class TestInstalledEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "paramcrop.cli", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout.startswith("paramcrop ")

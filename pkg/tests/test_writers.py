"""
Tests for run directories and comparison reports.
"""

import json
import math

import pandas as pd
import pytest

from fracture_distill.errors import ConfigError
from fracture_distill.model import load_checkpoint
from fracture_distill.writers.base import BaseWriter
from fracture_distill.writers.report_writer import ReportWriter, run_label, write_report
from fracture_distill.writers.run_writer import read_run, write_table


class TestBaseWriter:
    """Test BaseWriter helpers."""

    def test_json_gets_config_hash(self, temp_dir):
        """Test write_json adds the writer's hash."""
        writer = BaseWriter(temp_dir, config_hash="abc123abc123")
        path = writer.write_json(temp_dir / "x.json", {"b": 1, "a": 2})
        payload = json.loads(path.read_text())
        assert payload == {"a": 2, "b": 1, "config_hash": "abc123abc123"}
        assert path in writer.created_files

    def test_registry_lists_every_output(self, temp_dir):
        """Test text, bytes, rendered and third-party files all land in created_files."""
        writer = BaseWriter(temp_dir)
        writer.create_directory("sub")
        written = [
            writer.write_file("a.txt", "a"),
            writer.write_bytes("sub/b.bin", b"\x00"),
            writer.register_file("c.png"),
        ]
        assert writer.created_files == written
        assert (temp_dir / "sub").is_dir()
        assert not hasattr(writer, "get_stats")

    @pytest.mark.parametrize(
        "value, expected", [(0.5, "0.5000"), (math.nan, "-"), (None, "-"), ("x", "x")]
    )
    def test_number_format(self, value, expected):
        """Test the template number filter."""
        assert BaseWriter._format_number(value) == expected

    def test_write_table(self, temp_dir):
        """Test CSV tables carry a config_hash column."""
        path = write_table(temp_dir / "t.csv", [{"a": 1}, {"a": 2}], "h")
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["a", "config_hash"]
        assert frame["a"].tolist() == [1, 2]


class TestRunDirectory:
    """Test what a finished run leaves behind."""

    def test_files(self, finished_run):
        """Test every run artifact exists."""
        names = {p.name for p in finished_run.run_dir.iterdir()}
        assert {
            "config.json",
            "metrics.csv",
            "best.ckpt",
            "state.pt",
            "test_metrics.json",
            "froc_curve.csv",
            "README.md",
        } <= names

    def test_config_json(self, finished_run):
        """Test config.json records the resolved config and its hash."""
        payload = json.loads((finished_run.run_dir / "config.json").read_text())
        assert payload["config_hash"] == finished_run.config_hash
        assert payload["config"]["train"]["seed"] == 7

    def test_metrics_csv(self, finished_run):
        """Test one CSV row per epoch."""
        frame = pd.read_csv(finished_run.run_dir / "metrics.csv")
        assert len(frame) == 4
        assert {"epoch", "stage", "val_auroc", "loss_semi", "config_hash"} <= set(frame.columns)

    def test_test_metrics(self, finished_run):
        """Test the test metrics include curves and the pretrained baseline."""
        payload = json.loads((finished_run.run_dir / "test_metrics.json").read_text())
        assert payload["auroc"] == pytest.approx(finished_run.test.auroc)
        assert payload["curve"] and payload["roc"]
        assert set(payload["pretrained"]) == {"auroc", "froc_score"}

    def test_checkpoint_loads(self, finished_run):
        """Test best.ckpt is a loadable checkpoint."""
        checkpoint = load_checkpoint(finished_run.run_dir / "best.ckpt")
        assert checkpoint.architecture_id == "minifpn-c2x3-f3-k3-tanh"

    def test_readme(self, finished_run):
        """Test the README shows the run's test metrics."""
        text = (finished_run.run_dir / "README.md").read_text()
        assert "# Run seed-7" in text
        assert f"{finished_run.test.auroc:.4f}" in text

    def test_read_run(self, finished_run):
        """Test read_run returns config, test metrics and history."""
        run = read_run(finished_run.run_dir)
        assert run["config"]["config_hash"] == finished_run.config_hash
        assert len(run["history"]) == 4

    def test_read_incomplete_run(self, temp_dir):
        """Test an empty directory is not a run."""
        with pytest.raises(ConfigError):
            read_run(temp_dir)


class TestReportWriter:
    """Test comparison reports."""

    def test_report_files(self, finished_run, temp_dir):
        """Test plots and summary tables are written."""
        out = write_report([finished_run.run_dir], temp_dir / "report")
        for name in ("froc.png", "roc.png", "summary.csv", "summary.md"):
            assert (out / name).exists()
        summary = pd.read_csv(out / "summary.csv")
        assert summary.loc[0, "seed"] == 7
        assert "| Run |" in (out / "summary.md").read_text()

    def test_missing_run_dir(self, temp_dir):
        """Test missing directories are named in the error."""
        with pytest.raises(ConfigError, match="missing-run"):
            ReportWriter(temp_dir / "report", [temp_dir / "missing-run"])

    def test_no_runs(self, temp_dir):
        """Test a report needs at least one run."""
        with pytest.raises(ConfigError):
            ReportWriter(temp_dir / "report", [])

    def test_run_label(self, temp_dir):
        """Test seed directories are labeled with their parent."""
        assert run_label(temp_dir / "a0-4" / "seed-1") == "a0-4/seed-1"
        assert run_label(temp_dir / "custom") == "custom"

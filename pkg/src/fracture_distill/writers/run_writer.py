"""
Run directory writer.

    <run>/config.json        resolved configuration and hash
    <run>/metrics.csv        one row per epoch
    <run>/best.ckpt          best-validated checkpoint
    <run>/state.pt           resumable training state
    <run>/test_metrics.json  test AUROC, FROC score and curves
    <run>/froc_curve.csv     test FROC curve
    <run>/README.md          rendered summary
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from fracture_distill.config import ExperimentConfig, snapshot
from fracture_distill.errors import ConfigError
from fracture_distill.metrics import EvaluationReport
from fracture_distill.model import ModelCheckpoint, checkpoint_to_bytes
from fracture_distill.writers.base import BaseWriter

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "best.ckpt"
STATE_FILE = "state.pt"
TEST_METRICS_FILE = "test_metrics.json"
FROC_FILE = "froc_curve.csv"
README_FILE = "README.md"


def write_table(path: Path, rows: Sequence[Dict[str, Any]], config_hash: Optional[str]) -> Path:
    """CSV of `rows` with a trailing config_hash column."""
    frame = pd.DataFrame(list(rows))
    if config_hash is not None:
        frame["config_hash"] = config_hash
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


class RunWriter(BaseWriter):
    """Writes everything one training run produces."""

    def __init__(self, run_dir: Path, config: ExperimentConfig):
        super().__init__(run_dir, config_hash=config.hash)
        self.config = config

    @property
    def state_path(self) -> Path:
        return self.output_dir / STATE_FILE

    def write_config(self) -> Path:
        self.create_directory()
        return self.write_json(Path(CONFIG_FILE), snapshot(self.config))

    def write_metrics(self, history: Sequence[Dict[str, Any]]) -> Path:
        path = write_table(self.output_dir / METRICS_FILE, history, self.config_hash)
        return self.register_file(path.relative_to(self.output_dir))

    def write_checkpoint(self, checkpoint: ModelCheckpoint) -> Path:
        return self.write_bytes(Path(CHECKPOINT_FILE), checkpoint_to_bytes(checkpoint))

    def write_test_metrics(self, report: EvaluationReport, extra: Optional[Dict[str, Any]] = None) -> Path:
        payload = report.to_dict()
        payload.update(extra or {})
        if report.froc is not None:
            rows = [
                {"threshold": float(t), "fp_ratio": float(f), "recall": float(r)}
                for t, f, r in zip(report.froc.thresholds, report.froc.fp_ratios, report.froc.recalls)
            ]
            path = write_table(self.output_dir / FROC_FILE, rows, self.config_hash)
            self.register_file(path.relative_to(self.output_dir))
        return self.write_json(Path(TEST_METRICS_FILE), payload)

    def write_readme(self, history: Sequence[Dict[str, Any]], report: EvaluationReport) -> Path:
        return self.render_and_write(
            "run_readme.md.j2",
            Path(README_FILE),
            {
                "run_name": self.output_dir.name,
                "config": self.config.to_dict(),
                "history": list(history),
                "test": report,
            },
        )


# =============================================================================
# Reading runs back
# =============================================================================

def read_run(run_dir: Path) -> Dict[str, Any]:
    """Config, test metrics and history of a finished run."""
    run_dir = Path(run_dir)
    missing = [name for name in (CONFIG_FILE, TEST_METRICS_FILE) if not (run_dir / name).exists()]
    if not run_dir.is_dir() or missing:
        raise ConfigError(f"not a finished run directory: {run_dir}")
    config = json.loads((run_dir / CONFIG_FILE).read_text(encoding="utf-8"))
    test = json.loads((run_dir / TEST_METRICS_FILE).read_text(encoding="utf-8"))
    history: List[Dict[str, Any]] = []
    if (run_dir / METRICS_FILE).exists():
        history = pd.read_csv(run_dir / METRICS_FILE).to_dict("records")
    return {"run_dir": run_dir, "config": config, "test": test, "history": history}

"""
Comparison report over finished runs.

    <out>/froc.png     one FROC curve per run
    <out>/roc.png      one ROC curve per run
    <out>/summary.csv  one row per run
    <out>/summary.md   rendered table
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence

from fracture_distill.config import config_hash
from fracture_distill.errors import ConfigError
from fracture_distill.plots import plot_froc_curves, plot_roc_curves
from fracture_distill.writers.base import BaseWriter
from fracture_distill.writers.run_writer import read_run, write_table

logger = logging.getLogger(__name__)


def run_label(run_dir: Path) -> str:
    """Parent/name, so seed-N directories of different sweeps stay apart."""
    run_dir = Path(run_dir)
    if run_dir.parent.name and run_dir.name.startswith("seed-"):
        return f"{run_dir.parent.name}/{run_dir.name}"
    return run_dir.name


class ReportWriter(BaseWriter):
    """Reads run directories and writes plots plus a summary table."""

    def __init__(self, output_dir: Path, run_dirs: Sequence[Path]):
        missing = [str(d) for d in run_dirs if not Path(d).is_dir()]
        if missing:
            raise ConfigError(f"run directory not found: {', '.join(missing)}")
        if not run_dirs:
            raise ConfigError("report needs at least one run directory")
        self.runs = [read_run(Path(d)) for d in run_dirs]
        super().__init__(output_dir, config_hash=config_hash([r["config"]["config_hash"] for r in self.runs]))

    def summary_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for run in self.runs:
            config = run["config"]["config"]
            sharpening = config["train"]["sharpening"]
            rows.append(
                {
                    "run": run_label(run["run_dir"]),
                    "seed": config["train"]["seed"],
                    "center_t": sharpening["center_t"],
                    "max_strength_a0": sharpening["max_strength_a0"],
                    "positive_fraction": config["dataset"]["positive_fraction"],
                    "epochs_distill": config["train"]["epochs_distill"],
                    "auroc": run["test"]["auroc"],
                    "froc_score": run["test"]["froc_score"],
                    "run_config_hash": run["config"]["config_hash"],
                }
            )
        return rows

    def write(self) -> Path:
        self.create_directory()
        froc = {}
        roc = {}
        for run in self.runs:
            label = run_label(run["run_dir"])
            curve = run["test"].get("curve") or []
            if curve:
                froc[label] = ([p[0] for p in curve], [p[1] for p in curve])
            points = run["test"].get("roc") or []
            if points:
                roc[label] = ([p[0] for p in points], [p[1] for p in points])

        if froc:
            plot_froc_curves(froc, self.output_dir / "froc.png")
            self.register_file(Path("froc.png"))
        if roc:
            plot_roc_curves(roc, self.output_dir / "roc.png")
            self.register_file(Path("roc.png"))

        rows = self.summary_rows()
        write_table(self.output_dir / "summary.csv", rows, self.config_hash)
        self.register_file(Path("summary.csv"))
        self.render_and_write("report_summary.md.j2", Path("summary.md"), {"rows": rows})
        logger.info("Wrote report over %d runs to %s", len(self.runs), self.output_dir)
        return self.output_dir


def write_report(run_dirs: Sequence[Path], output_dir: Path) -> Path:
    return ReportWriter(output_dir, run_dirs).write()

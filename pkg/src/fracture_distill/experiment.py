"""
Run orchestration: single training runs, multi-seed runs and sweeps.

Every run writes only into its own directory, so seeds and sweep entries
can run in parallel worker processes (`FRACTURE_DISTILL_WORKERS`).
"""

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import pandas as pd

from fracture_distill.config import ExperimentConfig
from fracture_distill.data.storage import load_dataset
from fracture_distill.data.synthetic import SyntheticDataset, default_workers, generate_dataset
from fracture_distill.errors import ConfigError
from fracture_distill.metrics import EvaluationReport, evaluate
from fracture_distill.trainer import DistillationTrainer, TrainState, load_state, save_state
from fracture_distill.writers.base import BaseWriter
from fracture_distill.writers.run_writer import RunWriter, write_table

logger = logging.getLogger(__name__)

EpochHook = Callable[[Dict[str, Any]], None]


@dataclass
class RunResult:
    run_dir: Path
    config_hash: str
    test: EvaluationReport
    history: List[Dict[str, Any]]
    best_validation_auroc: float

    def summary(self) -> Dict[str, Any]:
        return {
            "run_dir": str(self.run_dir),
            "auroc": self.test.auroc,
            "froc_score": self.test.froc_score,
            "best_val_auroc": self.best_validation_auroc,
            "config_hash": self.config_hash,
        }


def seed_dir(output_dir: Path, seed: int) -> Path:
    return Path(output_dir) / f"seed-{seed}"


def prepare_dataset(config: ExperimentConfig, data_dir: Optional[Path] = None) -> SyntheticDataset:
    """Generate the dataset of `config`, or load it from `data_dir` and apply positive_fraction."""
    if data_dir is None:
        return generate_dataset(config.dataset, workers=1)
    dataset = load_dataset(data_dir)
    if dataset.spec.seed != config.dataset.seed:
        logger.warning(
            "Dataset at %s was generated with seed %d, run uses seed %d",
            data_dir, dataset.spec.seed, config.dataset.seed,
        )
    return dataset.with_positive_fraction(config.dataset.positive_fraction)


def run_training(
    config: ExperimentConfig,
    run_dir: Path,
    resume: bool = False,
    data_dir: Optional[Path] = None,
    on_epoch: Optional[EpochHook] = None,
) -> RunResult:
    """
    Train one seed and write its run directory.

    The training state and metrics CSV are rewritten after every epoch,
    so an interrupted run can continue with `resume=True`.
    """
    if len(config.seeds) != 1:
        raise ConfigError("run_training expects a single-seed config; use for_seed()")
    writer = RunWriter(run_dir, config)
    state: Optional[TrainState] = None
    if resume:
        if not writer.state_path.exists():
            raise ConfigError(f"nothing to resume: {writer.state_path} does not exist")
        state = load_state(writer.state_path, config.train)
        logger.info("Resuming %s at epoch %d", run_dir, state.next_epoch + 1)
    writer.write_config()

    dataset = prepare_dataset(config, data_dir)

    def checkpoint_epoch(epoch_state: TrainState, row: Dict[str, Any]) -> None:
        save_state(epoch_state, writer.state_path)
        writer.write_metrics(epoch_state.history)
        if on_epoch is not None:
            on_epoch(row)

    trainer = DistillationTrainer(dataset, config.train, epoch_callback=checkpoint_epoch)
    result = trainer.train(state)

    test = evaluate(result.best_checkpoint, dataset.test)
    baseline = evaluate(result.pretrained_checkpoint, dataset.test)
    writer.write_metrics(result.history)
    writer.write_checkpoint(result.best_checkpoint)
    writer.write_test_metrics(
        test,
        {
            "best_val_auroc": result.best_validation_auroc,
            "best_val_froc": result.best_validation_froc,
            "best_step": result.best_checkpoint.step_index,
            "pretrained": {"auroc": baseline.auroc, "froc_score": baseline.froc_score},
        },
    )
    writer.write_readme(result.history, test)
    logger.info(
        "Run %s: test AUROC=%.4f FROC=%.4f", run_dir, test.auroc, test.froc_score
    )
    return RunResult(
        run_dir=Path(run_dir),
        config_hash=config.hash,
        test=test,
        history=result.history,
        best_validation_auroc=result.best_validation_auroc,
    )


# =============================================================================
# Multi-run orchestration
# =============================================================================

def _run_job(job: Tuple[ExperimentConfig, Path, bool, Optional[Path]]) -> Dict[str, Any]:
    config, run_dir, resume, data_dir = job
    return run_training(config, run_dir, resume=resume, data_dir=data_dir).summary()


def _run_jobs(jobs: List[tuple], workers: Optional[int]) -> List[Dict[str, Any]]:
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(jobs) < 2:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def run_seeds(
    config: ExperimentConfig,
    output_dir: Path,
    resume: bool = False,
    data_dir: Optional[Path] = None,
    workers: Optional[int] = None,
) -> List[Dict[str, Any]]:
    """One run per seed under <output_dir>/seed-<N>/."""
    jobs = [
        (config.for_seed(seed), seed_dir(output_dir, seed), resume, data_dir)
        for seed in config.seeds
    ]
    return _run_jobs(jobs, workers)


def _value_dir(parameter: str, value: float) -> str:
    return f"{parameter}-{value:g}"


def run_sweep(
    config: ExperimentConfig,
    output_dir: Path,
    with_baseline: bool = False,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """
    Train every (value, seed) pair of the sweep and tabulate test metrics.

    Writes sweep.csv (one row per run), sweep_summary.csv (mean and std
    per value) and sweep.json. With `with_baseline`, each seed also gets a
    pretraining-only run.
    """
    if config.sweep is None:
        raise ConfigError("the configuration has no 'sweep' section")
    parameter = config.sweep.parameter
    output_dir = Path(output_dir)

    jobs, keys = [], []
    if with_baseline:
        baseline = dataclasses.replace(config, train=dataclasses.replace(config.train, epochs_distill=0))
        for seed in config.seeds:
            jobs.append((baseline.for_seed(seed), output_dir / "baseline" / f"seed-{seed}", False, None))
            keys.append(("baseline", math.nan, seed))
    for value in config.sweep.values:
        variant = config.with_value(parameter, value)
        for seed in config.seeds:
            jobs.append(
                (variant.for_seed(seed), output_dir / _value_dir(parameter, value) / f"seed-{seed}", False, None)
            )
            keys.append(("sweep", value, seed))

    summaries = _run_jobs(jobs, workers)
    rows = [
        {"variant": variant, "parameter": parameter, "value": value, "seed": seed, **summary}
        for (variant, value, seed), summary in zip(keys, summaries)
    ]
    table = pd.DataFrame(rows)
    table["order"] = (table["variant"] != "baseline").astype(int)
    table = table.sort_values(["order", "value", "seed"], na_position="first", kind="mergesort")
    table = table.drop(columns="order").reset_index(drop=True)

    grouped = (
        table.assign(value=table["value"].fillna(-1.0))
        .groupby(["variant", "value"], sort=False)[["auroc", "froc_score"]]
        .agg(["mean", "std"])
    )
    grouped.columns = [f"{metric}_{stat}" for metric, stat in grouped.columns]
    summary = grouped.reset_index()
    summary["value"] = summary["value"].where(summary["variant"] != "baseline")

    writer = BaseWriter(output_dir, config_hash=config.hash)
    writer.create_directory()
    write_table(output_dir / "sweep.csv", table.to_dict("records"), config.hash)
    write_table(output_dir / "sweep_summary.csv", summary.to_dict("records"), config.hash)
    writer.write_json(
        Path("sweep.json"),
        {
            "parameter": parameter,
            "rows": _json_rows(table),
            "summary": _json_rows(summary),
        },
    )
    logger.info("Sweep over %s: %d runs written to %s", parameter, len(table), output_dir)
    return table


def _json_rows(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    # NaN is not valid JSON
    return [
        {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
        for row in frame.to_dict("records")
    ]

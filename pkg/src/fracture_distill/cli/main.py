"""
Main CLI for fracture-distill using Typer.

Commands:
    fracture_distill generate        Generate the synthetic dataset
    fracture_distill train           Pretrain + distill, one run per seed
    fracture_distill sweep           Sweep t, a0 or the positive fraction
    fracture_distill report RUN...   FROC/ROC plots and a summary table
    fracture_distill sharpen-curve   Plot the sharpening function
    fracture_distill config          Write a sample configuration
    fracture_distill info            Show version and environment

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

import typer
import yaml
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from fracture_distill import __version__
from fracture_distill.config import ExperimentConfig, resolve_config, sample_config
from fracture_distill.errors import ConfigError, FractureDistillError
from fracture_distill.log_setup import configure_logging

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
FORMATS = ["yaml", "json"]

app = typer.Typer(
    name="fracture_distill",
    help="Label-sharpened teacher-student distillation for heatmap fracture detection",
    add_completion=False,
    rich_markup_mode="rich",
)

console = Console()


# =============================================================================
# Utility Functions
# =============================================================================

def version_callback(value: bool):
    """Show version and exit."""
    if value:
        console.print(f"[bold green]fracture-distill[/] version [cyan]{__version__}[/]")
        raise typer.Exit()


def use_deterministic_torch() -> None:
    """Process-wide: ask PyTorch for deterministic kernels before any training."""
    import torch

    torch.use_deterministic_algorithms(True, warn_only=True)


@contextmanager
def exit_codes() -> Iterator[None]:
    """Map package errors to exit codes 2 (configuration) and 3 (runtime)."""
    try:
        yield
    except typer.Exit:
        raise
    except ConfigError as exc:
        console.print(f"[red]Error: {exc}[/]")
        raise typer.Exit(EXIT_CONFIG)
    except FractureDistillError as exc:
        console.print(f"[red]Error: {exc}[/]")
        raise typer.Exit(EXIT_RUNTIME)
    except Exception as exc:  # noqa: BLE001
        console.print(f"[red]Unexpected failure: {type(exc).__name__}: {exc}[/]")
        raise typer.Exit(EXIT_RUNTIME)


def _resolve(config: Optional[Path], seeds: Optional[List[int]], overrides: Optional[List[str]]) -> ExperimentConfig:
    return resolve_config(config, overrides or [], seeds or [])


def _header(title: str, config: ExperimentConfig) -> None:
    console.print(Panel.fit(
        f"[bold green]{title}[/]  seeds [cyan]{', '.join(map(str, config.seeds))}[/]  "
        f"config [cyan]{config.hash}[/]",
        title="fracture-distill",
        border_style="green",
    ))


ConfigOption = typer.Option(None, "--config", "-c", help="YAML or JSON experiment file")
SeedOption = typer.Option(None, "--seed", "-s", help="Seed; repeat for several runs")
OverrideOption = typer.Option(None, "--override", help="key.path=value; repeatable")
VerboseOption = typer.Option(False, "--verbose", "-v", help="Debug logging")
WorkersOption = typer.Option(None, "--workers", "-w", help="Worker processes (default: $FRACTURE_DISTILL_WORKERS or 1)")


@app.callback()
def main(
    version: bool = typer.Option(
        None,
        "--version",
        help="Show version and exit",
        callback=version_callback,
        is_eager=True,
    ),
):
    """
    [bold green]fracture-distill[/] - semi-supervised fracture heatmap detection

    Train a detector from a few region-labeled images, many image-level
    positives and many negatives: supervised pretraining, then a mean
    teacher whose pseudo-GT is sharpened before the student learns from it.

    Quick Start:
        fracture_distill config --output experiment.yaml
        fracture_distill train --config experiment.yaml --seed 0
    """
    pass


# =============================================================================
# Generate Command
# =============================================================================

@app.command("generate")
def generate_command(
    config: Optional[Path] = ConfigOption,
    seed: Optional[List[int]] = SeedOption,
    override: Optional[List[str]] = OverrideOption,
    out: Path = typer.Option(Path("data"), "--out", "-o", help="Output directory"),
    workers: Optional[int] = WorkersOption,
    verbose: bool = VerboseOption,
):
    """
    Generate the synthetic dataset, one directory per seed.

    Example:
        fracture_distill generate --seed 0 --out data/
    """
    configure_logging(verbose)
    with exit_codes():
        from fracture_distill.data.storage import save_dataset
        from fracture_distill.data.synthetic import generate_dataset
        from fracture_distill.experiment import seed_dir

        experiment = _resolve(config, seed, override)
        _header("Generating dataset", experiment)
        for s in experiment.seeds:
            spec = experiment.for_seed(s).dataset
            with console.status(f"Rendering seed {s}..."):
                dataset = generate_dataset(spec, workers=workers)
            target = save_dataset(dataset, seed_dir(out, s))
            counts = ", ".join(f"{k}={v}" for k, v in dataset.counts().items())
            console.print(f"[green]✓[/] seed {s}: {counts} -> [cyan]{target}[/]")


# =============================================================================
# Train Command
# =============================================================================

@app.command("train")
def train_command(
    config: Optional[Path] = ConfigOption,
    seed: Optional[List[int]] = SeedOption,
    override: Optional[List[str]] = OverrideOption,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory (default: output_dir of the config)"),
    data: Optional[Path] = typer.Option(None, "--data", help="Dataset written by 'generate' (seed-<N> subdirectories are picked per seed)"),
    resume: bool = typer.Option(False, "--resume", help="Continue from state.pt in each run directory"),
    verbose: bool = VerboseOption,
):
    """
    Pretrain and distill; writes <out>/seed-<N>/ per seed.

    Example:
        fracture_distill train --config configs/desk.yaml --seed 0 --seed 1
    """
    configure_logging(verbose)
    with exit_codes():
        from fracture_distill.experiment import run_training, seed_dir

        experiment = _resolve(config, seed, override)
        use_deterministic_torch()
        out_dir = out or Path(experiment.output_dir)
        _header("Training", experiment)

        table = Table(title="Test metrics")
        table.add_column("Run", style="cyan")
        table.add_column("AUROC", justify="right")
        table.add_column("FROC", justify="right")

        for s in experiment.seeds:
            run_config = experiment.for_seed(s)
            data_dir = None
            if data is not None:
                data_dir = seed_dir(data, s) if seed_dir(data, s).is_dir() else data
            total = run_config.train.epochs_pretrain + run_config.train.epochs_distill
            with Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                BarColumn(),
                console=console,
            ) as progress:
                task = progress.add_task(f"seed {s}", total=total)

                def advance(row, task=task):
                    progress.update(
                        task,
                        completed=row["epoch"],
                        description=f"seed {s} {row['stage']} {row['stage_epoch']} "
                        f"AUROC {row['val_auroc']:.3f}",
                    )

                result = run_training(
                    run_config, seed_dir(out_dir, s), resume=resume, data_dir=data_dir, on_epoch=advance
                )
            table.add_row(str(result.run_dir), f"{result.test.auroc:.4f}", f"{result.test.froc_score:.4f}")

        console.print(table)
        console.print(f"\n[green]✓[/] Runs written to [cyan]{out_dir}[/]")


# =============================================================================
# Sweep Command
# =============================================================================

@app.command("sweep")
def sweep_command(
    config: Optional[Path] = ConfigOption,
    seed: Optional[List[int]] = SeedOption,
    override: Optional[List[str]] = OverrideOption,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    with_baseline: bool = typer.Option(False, "--with-baseline", help="Add pretraining-only runs"),
    workers: Optional[int] = WorkersOption,
    verbose: bool = VerboseOption,
):
    """
    Train every sweep value x seed and write sweep.csv / sweep.json.

    Example:
        fracture_distill sweep --config configs/desk.yaml --override sweep.values=[1,4]
    """
    configure_logging(verbose)
    with exit_codes():
        from fracture_distill.experiment import run_sweep

        experiment = _resolve(config, seed, override)
        use_deterministic_torch()
        if experiment.sweep is None:
            raise ConfigError("the configuration has no 'sweep' section")
        out_dir = out or Path(experiment.output_dir) / f"sweep-{experiment.sweep.parameter}"
        _header(f"Sweeping {experiment.sweep.parameter}", experiment)
        with console.status("Running sweep..."):
            table = run_sweep(experiment, out_dir, with_baseline=with_baseline, workers=workers)

        view = Table(title=f"Sweep over {experiment.sweep.parameter}")
        for column in ("variant", "value", "seed", "auroc", "froc_score"):
            view.add_column(column, justify="right" if column != "variant" else "left")
        for row in table.to_dict("records"):
            view.add_row(
                row["variant"],
                "-" if row["value"] != row["value"] else f"{row['value']:g}",
                str(row["seed"]),
                f"{row['auroc']:.4f}",
                f"{row['froc_score']:.4f}",
            )
        console.print(view)
        console.print(f"\n[green]✓[/] Sweep written to [cyan]{out_dir}[/]")


# =============================================================================
# Report Command
# =============================================================================

@app.command("report")
def report_command(
    runs: List[Path] = typer.Argument(..., help="Run directories written by 'train' or 'sweep'"),
    out: Path = typer.Option(Path("report"), "--out", "-o", help="Output directory"),
    verbose: bool = VerboseOption,
):
    """
    Plot FROC and ROC curves of finished runs and tabulate their metrics.

    Example:
        fracture_distill report runs/seed-0 runs/seed-1 --out report/
    """
    configure_logging(verbose)
    with exit_codes():
        from fracture_distill.writers.report_writer import write_report

        target = write_report(runs, out)
        console.print(f"[green]✓[/] Report over {len(runs)} run(s) written to [cyan]{target}[/]")


# =============================================================================
# Sharpening Curve Command
# =============================================================================

@app.command("sharpen-curve")
def sharpen_curve_command(
    center: float = typer.Option(0.4, "--center", "-t", help="Sharpening center t"),
    strength: Optional[List[float]] = typer.Option(None, "--strength", "-a", help="Strength; repeatable (default 1 2 4 8 16)"),
    out: Path = typer.Option(Path("sharpening.png"), "--out", "-o", help="Output image"),
):
    """
    Plot S(p) at a fixed center for several strengths.

    Example:
        fracture_distill sharpen-curve --center 0.4 -a 1 -a 4 -a 16
    """
    with exit_codes():
        from fracture_distill.plots import plot_sharpening_curves
        from fracture_distill.sharpening import SharpeningConfig, sharpening_curve

        sharpening = SharpeningConfig(center_t=center)
        strengths = strength or [1.0, 2.0, 4.0, 8.0, 16.0]
        if any(a < 1.0 for a in strengths):
            raise ConfigError("sharpening strengths must be >= 1")
        curves = sharpening_curve(sharpening, strengths)
        plot_sharpening_curves(curves, center, out)
        console.print(f"[green]✓[/] Sharpening curves written to [cyan]{out}[/]")


# =============================================================================
# Config Command
# =============================================================================

@app.command("config")
def config_command(
    output: Path = typer.Option(
        Path("fracture-distill.yaml"),
        "--output",
        "-o",
        help="Output file path",
    ),
    format: str = typer.Option(
        "yaml",
        "--format",
        "-f",
        help="Output format: yaml or json",
    ),
):
    """
    Generate a sample configuration file with desk-scale defaults.

    Example:
        fracture_distill config --output=experiment.yaml
    """
    if format not in FORMATS:
        console.print(f"[red]Error: Invalid format '{format}'. Choose from: {', '.join(FORMATS)}[/]")
        raise typer.Exit(EXIT_CONFIG)

    config = sample_config()
    with open(output, "w", encoding="utf-8") as f:
        if format == "yaml":
            yaml.safe_dump(config, f, default_flow_style=False, sort_keys=False)
        else:
            json.dump(config, f, indent=2)

    console.print(f"[green]✓[/] Configuration file created: [cyan]{output}[/]")
    console.print("\n[bold]Usage:[/]")
    console.print(f"  fracture_distill train --config={output} --seed 0")


# =============================================================================
# Info Command
# =============================================================================

@app.command("info")
def info_command():
    """
    Show version and numerical environment.
    """
    import numpy
    import torch

    from fracture_distill.data.synthetic import WORKERS_ENV

    table = Table(title="fracture-distill Information", show_header=False)
    table.add_column("Key", style="cyan")
    table.add_column("Value", style="green")

    table.add_row("Version", __version__)
    table.add_row("Python", f"{sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}")
    table.add_row("NumPy", numpy.__version__)
    table.add_row("PyTorch", torch.__version__)
    table.add_row("Torch threads", str(torch.get_num_threads()))
    table.add_row(WORKERS_ENV, os.environ.get(WORKERS_ENV, "1"))

    console.print(table)


if __name__ == "__main__":
    app()

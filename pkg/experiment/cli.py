#!/usr/bin/env python3
"""The ``imu-transfer`` command line.

Verbs: ingest, train-source, adapt, baseline, evaluate, export-embeddings,
experiment run, experiment summarize.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer
from loguru import logger
from typing_extensions import Annotated

from data.ingest import ingest_command
from evaluation.cli import evaluate_command, export_embeddings_command
from experiment.config import load_config
from experiment.runner import load_records, run_experiment
from experiment.summary import summarize, write_summary
from training.cli import adapt_command, baseline_command, train_source_command

DEFAULT_RESULTS_DIR = Path("results")

app = typer.Typer(
    help="Unsupervised adaptation of IMU activity classifiers to new body sites",
    no_args_is_help=True,
)
app.command("ingest")(ingest_command)
app.command("train-source")(train_source_command)
app.command("adapt")(adapt_command)
app.command("baseline")(baseline_command)
app.command("evaluate")(evaluate_command)
app.command("export-embeddings")(export_embeddings_command)

experiment_app = typer.Typer(help="Run declarative experiments and summarize their records")
app.add_typer(experiment_app, name="experiment")


@experiment_app.command("run")
def run_command(
    config_path: Annotated[Path, typer.Argument(help="Experiment config (YAML, version 1)")],
    out_dir: Annotated[
        Optional[Path],
        typer.Option("--out-dir", "-o", help="Results directory (default: results/<name>)"),
    ] = None,
    workers: Annotated[
        Optional[int], typer.Option("--workers", "-w", help="Parallel repetitions")
    ] = None,
    force: Annotated[
        bool, typer.Option("--force", help="Overwrite results of a different config")
    ] = False,
    progress: Annotated[
        bool,
        typer.Option("--progress/--no-progress", help="Show tqdm progress (off when not a TTY)"),
    ] = True,
) -> None:
    """Execute every repetition of an experiment and write its summary tables.

    Examples:

        imu-transfer experiment run experiment/configs/three_way_synthetic.yaml -w 4
    """
    try:
        config = load_config(config_path)
        if workers is not None:
            config = config.replace(workers=workers)
        out_dir = out_dir or DEFAULT_RESULTS_DIR / config.name
        records, summary = run_experiment(config, out_dir, force=force, progress=progress)
    except (OSError, ValueError) as e:
        logger.error(f"experiment failed: {e}")
        raise typer.Exit(1) from e

    logger.success(
        f"{config.name}: {len(records)} repetition(s), config {summary.config_hash[:12]}"
    )
    typer.echo(summary.wide.to_string())
    typer.echo(str(out_dir))


@experiment_app.command("summarize")
def summarize_command(
    results_dir: Annotated[Path, typer.Argument(help="Results directory of `experiment run`")],
) -> None:
    """Rebuild the summary tables from the run records in a results directory."""
    try:
        summary = summarize(load_records(results_dir))
        paths = write_summary(summary, results_dir)
    except (OSError, ValueError) as e:
        logger.error(f"summarize failed: {e}")
        raise typer.Exit(1) from e

    logger.success(f"Summary of config {summary.config_hash[:12]} written to {results_dir}")
    for path in paths:
        typer.echo(str(path))


def main() -> None:
    """Entry point for console script."""
    app()


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Training verbs: train-source, adapt and baseline.

Every verb reads a window archive (its stored 30/50/20 partition), writes a
checkpoint and a JSON run report next to it.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

import typer
from loguru import logger
from typing_extensions import Annotated

from data.archive import load_split
from model.checkpoint import load_checkpoint, save_checkpoint
from model.convlstm import CONV_FILTERS, HIDDEN_SIZE, KERNEL_SIZE, Domain, ModelMeta, init_model
from numerics.optim import DEFAULT_LEARNING_RATE
from training.adapt import adapt_unsupervised
from training.baselines import BaselineMethod, run_baseline
from training.config import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE,
    LossKind,
    LossSpec,
    Regularization,
    RegularizationTarget,
    TrainConfig,
)
from training.supervised import train_supervised

app = typer.Typer(help="Train source models, adapt them to a target site, run baselines")

ArchiveOption = Annotated[Path, typer.Option("--archive", "-a", help="Window archive from ingest")]
OutOption = Annotated[Path, typer.Option("--out", "-o", help="Output checkpoint")]
ReportOption = Annotated[
    Optional[Path], typer.Option("--report", help="Run report JSON (default: <out>.json)")
]
LearningRateOption = Annotated[float, typer.Option("--lr", help="RMSprop learning rate")]
BatchOption = Annotated[int, typer.Option("--batch-size", help="Mini-batch size")]
EpochsOption = Annotated[int, typer.Option("--epochs", help="Maximum number of epochs")]
PatienceOption = Annotated[int, typer.Option("--patience", help="Early-stopping patience")]
SeedOption = Annotated[int, typer.Option("--seed", help="Training seed")]
FractionOption = Annotated[float, typer.Option("--fraction", help="Fraction of windows used")]
SwapOption = Annotated[
    bool, typer.Option("--swap-sites/--no-swap-sites", help="Exchange source and target sites")
]
StandardizeOption = Annotated[
    bool,
    typer.Option("--standardize/--raw-units", help="Per-channel standardization of each site"),
]
ForceOption = Annotated[bool, typer.Option("--force", help="Overwrite existing files")]
ProgressOption = Annotated[
    bool,
    typer.Option("--progress/--no-progress", help="Show tqdm progress (auto-disabled off a TTY)"),
]


def write_report(path: Path, payload: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _check_outputs(force: bool, *paths: Path) -> None:
    for path in paths:
        if path.exists() and not force:
            logger.error(f"{path} exists; use --force to overwrite")
            raise typer.Exit(1)


@app.command("train-source")
def train_source_command(
    archive: ArchiveOption,
    out: OutOption,
    report: ReportOption = None,
    learning_rate: LearningRateOption = DEFAULT_LEARNING_RATE,
    batch_size: BatchOption = DEFAULT_BATCH_SIZE,
    epochs: EpochsOption = DEFAULT_MAX_EPOCHS,
    patience: PatienceOption = DEFAULT_PATIENCE,
    seed: SeedOption = 0,
    fraction: FractionOption = 1.0,
    conv_filters: Annotated[int, typer.Option("--conv-filters", help="Filters per conv layer")] = (
        CONV_FILTERS
    ),
    kernel_size: Annotated[int, typer.Option("--kernel-size", help="Conv kernel size")] = (
        KERNEL_SIZE
    ),
    hidden_size: Annotated[int, typer.Option("--hidden-size", help="LSTM hidden size")] = (
        HIDDEN_SIZE
    ),
    swap_sites: SwapOption = False,
    standardize: StandardizeOption = True,
    force: ForceOption = False,
    progress: ProgressOption = True,
) -> None:
    """Train the source model M_S on the source windows of the train partition."""
    report = report or out.with_suffix(".json")
    _check_outputs(force, out, report)
    try:
        config = TrainConfig(
            learning_rate=learning_rate,
            batch_size=batch_size,
            max_epochs=epochs,
            patience=patience,
            seed=seed,
            fraction=fraction,
            progress=progress,
        )
        data = load_split(archive, standardize, swap_sites).train_source.source_windows()
        meta = ModelMeta(
            in_channels=data.num_channels,
            num_classes=data.num_classes,
            window_length=data.windows.shape[2],
            domain=Domain.SOURCE,
            conv_filters=conv_filters,
            kernel_size=kernel_size,
            hidden_size=hidden_size,
        )
        model, history = train_supervised(init_model(meta, seed), data, config, desc="Source")
        save_checkpoint(model, out)
    except (OSError, ValueError) as e:
        logger.error(f"train-source failed: {e}")
        raise typer.Exit(1) from e

    write_report(
        report,
        {
            "command": "train-source",
            "archive": str(archive),
            "checkpoint": str(out),
            "windows": len(data),
            "swap_sites": swap_sites,
            "standardize": standardize,
            "train": config.to_dict(),
            "meta": meta.to_dict(),
            "history": history.to_dict(),
        },
    )
    logger.success(f"Source model written to {out}")
    typer.echo(str(out))


@app.command("adapt")
def adapt_command(
    archive: ArchiveOption,
    source: Annotated[Path, typer.Option("--source", "-s", help="Source checkpoint (M_S)")],
    out: OutOption,
    report: ReportOption = None,
    loss: Annotated[LossKind, typer.Option("--loss", case_sensitive=False)] = LossKind.MAE,
    reg: Annotated[
        Regularization, typer.Option("--reg", case_sensitive=False, help="Penalty")
    ] = Regularization.NONE,
    strength: Annotated[
        Optional[float],
        typer.Option("--lambda", help="Penalty strength (default 1e-5 for L1, 1e-4 for L2)"),
    ] = None,
    reg_target: Annotated[
        RegularizationTarget,
        typer.Option("--reg-target", case_sensitive=False, help="What the penalty applies to"),
    ] = RegularizationTarget.EMBEDDER_WEIGHTS,
    learning_rate: LearningRateOption = DEFAULT_LEARNING_RATE,
    batch_size: BatchOption = DEFAULT_BATCH_SIZE,
    epochs: EpochsOption = DEFAULT_MAX_EPOCHS,
    patience: PatienceOption = DEFAULT_PATIENCE,
    seed: SeedOption = 0,
    fraction: FractionOption = 1.0,
    swap_sites: SwapOption = False,
    standardize: StandardizeOption = True,
    force: ForceOption = False,
    progress: ProgressOption = True,
) -> None:
    """Adapt M_S to the target site on unlabeled window pairs of the adapt partition.

    Examples:

        imu-transfer adapt -a pamap2.warc -s ms.ckpt -o mt.ckpt --loss mae --reg l2 --lambda 1e-4
    """
    report = report or out.with_suffix(".json")
    _check_outputs(force, out, report)
    try:
        spec = LossSpec(loss, reg, reg_target, strength)
        config = TrainConfig(
            learning_rate=learning_rate,
            batch_size=batch_size,
            max_epochs=epochs,
            patience=patience,
            seed=seed,
            fraction=fraction,
            progress=progress,
        )
        pairs = load_split(archive, standardize, swap_sites).adapt.strip_labels()
        model, adapt_report = adapt_unsupervised(load_checkpoint(source), pairs, spec, config)
        save_checkpoint(model, out)
    except (OSError, ValueError, TypeError) as e:
        logger.error(f"adapt failed: {e}")
        raise typer.Exit(1) from e

    write_report(
        report,
        {
            "command": "adapt",
            "archive": str(archive),
            "source": str(source),
            "checkpoint": str(out),
            "pairs": len(pairs),
            "swap_sites": swap_sites,
            "standardize": standardize,
            "loss": spec.to_dict(),
            "train": config.to_dict(),
            "adapt": adapt_report.to_dict(),
        },
    )
    logger.success(f"Adapted target model written to {out}")
    typer.echo(str(out))


@app.command("baseline")
def baseline_command(
    archive: ArchiveOption,
    source: Annotated[Path, typer.Option("--source", "-s", help="Source checkpoint (M_S)")],
    out: OutOption,
    method: Annotated[
        BaselineMethod, typer.Option("--method", "-m", case_sensitive=False, help="lp, ft or lpft")
    ] = BaselineMethod.LP,
    fraction: FractionOption = 1.0,
    report: ReportOption = None,
    learning_rate: LearningRateOption = DEFAULT_LEARNING_RATE,
    batch_size: BatchOption = DEFAULT_BATCH_SIZE,
    epochs: EpochsOption = DEFAULT_MAX_EPOCHS,
    patience: PatienceOption = DEFAULT_PATIENCE,
    seed: SeedOption = 0,
    swap_sites: SwapOption = False,
    standardize: StandardizeOption = True,
    force: ForceOption = False,
    progress: ProgressOption = True,
) -> None:
    """Supervised transfer baseline on labeled target windows of the adapt partition."""
    report = report or out.with_suffix(".json")
    _check_outputs(force, out, report)
    try:
        config = TrainConfig(
            learning_rate=learning_rate,
            batch_size=batch_size,
            max_epochs=epochs,
            patience=patience,
            seed=seed,
            fraction=fraction,
            progress=progress,
        )
        data = load_split(archive, standardize, swap_sites).adapt.target_windows()
        model = run_baseline(method, load_checkpoint(source), data, config)
        save_checkpoint(model, out)
    except (OSError, ValueError) as e:
        logger.error(f"baseline failed: {e}")
        raise typer.Exit(1) from e

    write_report(
        report,
        {
            "command": "baseline",
            "method": method.value,
            "archive": str(archive),
            "source": str(source),
            "checkpoint": str(out),
            "swap_sites": swap_sites,
            "standardize": standardize,
            "train": config.to_dict(),
        },
    )
    logger.success(f"{method.value.upper()} model written to {out}")
    typer.echo(str(out))


def main() -> None:
    """Entry point for console script."""
    app()


if __name__ == "__main__":
    main()

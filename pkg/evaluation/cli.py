#!/usr/bin/env python3
"""Evaluation verbs: evaluate and export-embeddings."""

from __future__ import annotations

from enum import Enum
from pathlib import Path

import typer
from loguru import logger
from typing_extensions import Annotated

from data.archive import load_split
from data.windows import LabeledWindows, PairedWindows
from evaluation.report import evaluate, export_embeddings, write_report
from model.checkpoint import load_checkpoint

app = typer.Typer(help="Score checkpoints on archived windows and export embeddings")


class Partition(str, Enum):
    TRAIN_SOURCE = "train_source"
    ADAPT = "adapt"
    TEST = "test"


class Site(str, Enum):
    SOURCE = "source"
    TARGET = "target"


def site_windows(part: PairedWindows, site: Site) -> LabeledWindows:
    return part.source_windows() if Site(site) is Site.SOURCE else part.target_windows()


CheckpointOption = Annotated[Path, typer.Option("--checkpoint", "-c", help="Model checkpoint")]
ArchiveOption = Annotated[Path, typer.Option("--archive", "-a", help="Window archive from ingest")]
PartitionOption = Annotated[
    Partition, typer.Option("--partition", "-p", case_sensitive=False, help="Archive partition")
]
SiteOption = Annotated[
    Site, typer.Option("--site", case_sensitive=False, help="Body site whose windows are used")
]
SwapOption = Annotated[
    bool, typer.Option("--swap-sites/--no-swap-sites", help="Exchange source and target sites")
]
StandardizeOption = Annotated[
    bool,
    typer.Option("--standardize/--raw-units", help="Per-channel standardization of each site"),
]
ForceOption = Annotated[bool, typer.Option("--force", help="Overwrite existing files")]


@app.command("evaluate")
def evaluate_command(
    checkpoint: CheckpointOption,
    archive: ArchiveOption,
    out: Annotated[Path, typer.Option("--out", "-o", help="Metrics report JSON")],
    partition: PartitionOption = Partition.TEST,
    site: SiteOption = Site.SOURCE,
    swap_sites: SwapOption = False,
    standardize: StandardizeOption = True,
    force: ForceOption = False,
) -> None:
    """Accuracy, one-vs-rest P/R/F1, confusion matrix and ROC of a checkpoint.

    Examples:

        imu-transfer evaluate -c mt.ckpt -a opportunity.warc --site target -o mt_test.json
    """
    if out.exists() and not force:
        logger.error(f"{out} exists; use --force to overwrite")
        raise typer.Exit(1)
    try:
        model = load_checkpoint(checkpoint)
        part = load_split(archive, standardize, swap_sites).partitions()[partition.value]
        report = evaluate(model, site_windows(part, site))
        written = write_report(report, out)
    except (OSError, ValueError) as e:
        logger.error(f"evaluate failed: {e}")
        raise typer.Exit(1) from e

    logger.success(
        f"{partition.value}/{site.value}: accuracy {report.accuracy:.4f}, "
        f"macro F1 {report.macro_f1:.4f}"
    )
    for path in written:
        typer.echo(str(path))


@app.command("export-embeddings")
def export_embeddings_command(
    checkpoint: CheckpointOption,
    archive: ArchiveOption,
    out: Annotated[Path, typer.Option("--out", "-o", help="Embedding CSV")],
    partition: PartitionOption = Partition.TEST,
    site: SiteOption = Site.SOURCE,
    labels: Annotated[
        bool, typer.Option("--labels/--no-labels", help="Write the activity label column")
    ] = True,
    swap_sites: SwapOption = False,
    standardize: StandardizeOption = True,
    force: ForceOption = False,
) -> None:
    """Embedder output per window, for projection with external tools."""
    if out.exists() and not force:
        logger.error(f"{out} exists; use --force to overwrite")
        raise typer.Exit(1)
    try:
        model = load_checkpoint(checkpoint)
        part = load_split(archive, standardize, swap_sites).partitions()[partition.value]
        data = site_windows(part, site)
        names = [data.class_names[k] for k in data.labels] if labels else None
        domain = part.source_site if Site(site) is Site.SOURCE else part.target_site
        export_embeddings(model, data.windows, out, part.pair_ids, domain, names)
    except (OSError, ValueError) as e:
        logger.error(f"export-embeddings failed: {e}")
        raise typer.Exit(1) from e

    logger.success(f"Embeddings written to {out}")
    typer.echo(str(out))


def main() -> None:
    """Entry point for console script."""
    app()


if __name__ == "__main__":
    main()

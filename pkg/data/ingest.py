#!/usr/bin/env python3
"""Harmonize a raw activity dataset into a window archive.

Each raw file is parsed, short gaps are interpolated, channels are scaled to
canonical units and resampled to 30 Hz, then cut into 100-sample window pairs
(source site, target site). The pairs of all files are split 30/50/20 with the
given seed and written to one archive, together with a class-distribution CSV.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import pandas as pd
import typer
from loguru import logger
from typing_extensions import Annotated

from data.archive import WindowArchive, write_archive
from data.descriptor import (
    DatasetDescriptor,
    LabelSchemeKind,
    builtin_descriptor,
    load_descriptor,
    resolve_data_path,
)
from data.recording import MAX_GAP, TARGET_RATE, find_raw_files, load_harmonized
from data.windows import (
    WINDOW_LENGTH,
    PairedWindows,
    class_distribution,
    split_codes,
    split_from_codes,
    windowize,
)

DEFAULT_SEED = 0
DEFAULT_WORKERS = 1
# datasets whose five-class distribution is dominated by "other"
OTHER_DOMINANT = ("pamap2", "mhealth")

app = typer.Typer(help="Harmonize raw IMU recordings into a window archive")


def _window_file(
    path: Path,
    descriptor: DatasetDescriptor,
    scheme_kind: LabelSchemeKind,
    max_gap: int,
    progress: bool,
) -> tuple[PairedWindows, int]:
    recording = load_harmonized(
        path, descriptor, max_gap=max_gap, target_rate=TARGET_RATE, progress=progress
    )
    windows = windowize(
        recording,
        descriptor.label_scheme(scheme_kind),
        descriptor.source_site,
        descriptor.target_site,
        length=WINDOW_LENGTH,
    )
    return windows, recording.num_samples // WINDOW_LENGTH


def build_windows(
    files: list[Path],
    descriptor: DatasetDescriptor,
    scheme_kind: LabelSchemeKind = LabelSchemeKind.FIVE_CLASS,
    max_gap: int = MAX_GAP,
    workers: int = DEFAULT_WORKERS,
    progress: bool = True,
) -> PairedWindows:
    """Window pairs of every file, with pair ids unique across files.

    Files are processed in the given order; pair ids depend only on that order.
    """
    n = len(files)
    args = ([descriptor] * n, [scheme_kind] * n, [max_gap] * n, [progress and workers == 1] * n)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_window_file, files, *args))
    else:
        results = [_window_file(f, *a) for f, *a in zip(files, *args)]

    parts = []
    offset = 0
    for path, (windows, potential) in zip(files, results):
        logger.info(f"{path.name}: {len(windows)} window pairs")
        parts.append(
            PairedWindows(
                source=windows.source,
                target=windows.target,
                labels=windows.labels,
                pair_ids=windows.pair_ids + offset,
                subjects=windows.subjects,
                start_times=windows.start_times,
                class_names=windows.class_names,
                source_site=windows.source_site,
                target_site=windows.target_site,
            )
        )
        offset += potential
    return PairedWindows.concat(parts)


def check_distribution(table: pd.DataFrame, dataset_id: str) -> bool:
    """Whether "other" is the largest class where that is expected; warns otherwise."""
    if dataset_id not in OTHER_DOMINANT or "other" not in set(table["class_name"]):
        return True
    largest = table.loc[table["count"].idxmax(), "class_name"]
    if largest != "other":
        logger.warning(
            f"{dataset_id}: expected 'other' to be the largest class, found '{largest}'"
        )
        return False
    return True


def ingest(
    dataset: str,
    raw_dir: Path,
    out: Path,
    descriptor_path: Optional[Path] = None,
    scheme: LabelSchemeKind = LabelSchemeKind.FIVE_CLASS,
    seed: int = DEFAULT_SEED,
    max_gap: int = MAX_GAP,
    by_subject: bool = False,
    workers: int = DEFAULT_WORKERS,
    progress: bool = True,
) -> WindowArchive:
    """Library form of the ``ingest`` command; returns the written archive."""
    descriptor = (
        load_descriptor(descriptor_path) if descriptor_path else builtin_descriptor(dataset)
    )
    if descriptor.dataset_id != dataset.lower():
        raise ValueError(
            f"descriptor is for '{descriptor.dataset_id}', not for dataset '{dataset}'"
        )
    files = find_raw_files(resolve_data_path(raw_dir), descriptor)
    logger.info(f"Found {len(files)} {descriptor.dataset_id} files")

    windows = build_windows(files, descriptor, scheme, max_gap, workers, progress)
    order = windows.canonical_order()
    windows = windows.take(order)
    codes = split_codes(windows, seed=seed, by_subject=by_subject)
    archive = WindowArchive(descriptor.dataset_id, windows, partition=codes, seed=seed)
    write_archive(archive, out)

    table = class_distribution(windows.labels, windows.class_names)
    table.to_csv(out.with_suffix(".classes.csv"), index=False)
    for row in table.itertuples():
        logger.info(f"  {row.class_name}: {row.count} ({row.fraction:.1%})")
    check_distribution(table, descriptor.dataset_id)

    sizes = split_from_codes(windows, codes, seed).sizes()
    logger.info(f"Partition sizes train_source/adapt/test: {sizes}")
    return archive


@app.command("ingest")
def ingest_command(
    dataset: Annotated[
        str, typer.Option("--dataset", help="Dataset id: opportunity, pamap2 or mhealth")
    ],
    raw_dir: Annotated[
        Path, typer.Option("--raw-dir", help="Directory holding the raw dataset files")
    ],
    out: Annotated[Path, typer.Option("--out", "-o", help="Output window archive")],
    descriptor: Annotated[
        Optional[Path],
        typer.Option("--descriptor", help="Descriptor YAML (default: the built-in one)"),
    ] = None,
    scheme: Annotated[
        LabelSchemeKind, typer.Option("--scheme", case_sensitive=False, help="Label set")
    ] = LabelSchemeKind.FIVE_CLASS,
    seed: Annotated[int, typer.Option("--seed", help="Seed of the 30/50/20 split")] = DEFAULT_SEED,
    max_gap: Annotated[
        int, typer.Option("--max-gap", help="Longest gap (samples) to interpolate")
    ] = MAX_GAP,
    by_subject: Annotated[
        bool, typer.Option("--by-subject/--by-window", help="Split by subject instead of window")
    ] = False,
    workers: Annotated[int, typer.Option("--workers", "-w", help="Parallel file parsers")] = (
        DEFAULT_WORKERS
    ),
    force: Annotated[bool, typer.Option("--force", help="Overwrite an existing archive")] = False,
    progress: Annotated[
        bool,
        typer.Option(
            "--progress/--no-progress", help="Show tqdm progress (auto-disabled off a TTY)"
        ),
    ] = True,
) -> None:
    """Parse, harmonize, window and split one dataset.

    Examples:

        imu-transfer ingest --dataset pamap2 --raw-dir PAMAP2_Dataset/Protocol --out pamap2.warc

        imu-transfer ingest --dataset mhealth --raw-dir MHEALTHDATASET --out mh.warc --scheme all
    """
    if out.exists() and not force:
        logger.error(f"{out} exists; use --force to overwrite")
        raise typer.Exit(1)
    try:
        archive = ingest(
            dataset,
            raw_dir,
            out,
            descriptor_path=descriptor,
            scheme=scheme,
            seed=seed,
            max_gap=max_gap,
            by_subject=by_subject,
            workers=workers,
            progress=progress,
        )
    except (OSError, ValueError) as e:
        logger.error(f"Ingest failed: {e}")
        raise typer.Exit(1) from e
    logger.success(f"Wrote {len(archive.windows)} window pairs to {out}")
    typer.echo(str(out))


def main() -> None:
    """Entry point for console script."""
    app()


if __name__ == "__main__":
    main()

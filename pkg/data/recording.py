"""Raw recordings: parsing, gap repair, unit conversion and resampling.

Missing samples are carried as NaN from parsing onwards. Every transform
returns a new ``Recording``; inputs are never modified.
"""

from __future__ import annotations

import dataclasses
import math
import re
import sys
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from loguru import logger
from tqdm import tqdm

from data.descriptor import DatasetDescriptor, UnknownLabelError

TARGET_RATE = 30.0
MAX_GAP = 15
_RATE_TOLERANCE = 1e-9


class ParseError(ValueError):
    """Malformed row in a raw dataset file."""

    def __init__(self, path: Union[str, Path], line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = Path(path)
        self.line_number = line_number


class UnitConversionError(ValueError):
    """Raised when a recording would be scaled to canonical units twice."""


@dataclass(frozen=True)
class Recording:
    """One file's worth of simultaneous samples from every descriptor site.

    ``channels`` maps site name to a float64 [channels, samples] matrix with NaN
    for missing samples; all sites share ``timestamps`` (seconds) and ``labels``
    (native activity codes).
    """

    dataset_id: str
    subject: str
    sample_rate: float
    timestamps: np.ndarray
    channels: Mapping[str, np.ndarray]
    labels: np.ndarray
    units_converted: bool = False

    def __post_init__(self) -> None:
        n = len(self.timestamps)
        if self.labels.shape != (n,):
            raise ValueError(f"{n} timestamps but labels shaped {self.labels.shape}")
        for site, matrix in self.channels.items():
            if matrix.ndim != 2 or matrix.shape[1] != n:
                raise ValueError(f"site '{site}' matrix {matrix.shape} does not span {n} samples")
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def num_samples(self) -> int:
        return len(self.timestamps)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0]) if self.num_samples else 0.0

    def missing_fraction(self, site: str) -> float:
        matrix = self.channels[site]
        return float(np.isnan(matrix).mean()) if matrix.size else 0.0


# ============================================================================
# Parsing
# ============================================================================


def subject_of(path: Union[str, Path], descriptor: DatasetDescriptor) -> str:
    match = re.search(descriptor.subject_pattern, Path(path).name)
    return match.group(1) if match else Path(path).stem


def parse_recording(
    path: Union[str, Path], descriptor: DatasetDescriptor, progress: bool = False
) -> Recording:
    """Read one raw file into a Recording at native rate and native units.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        ParseError: wrong column count or an unparseable number, with line number.
        UnknownLabelError: a label code the descriptor does not declare.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Raw file not found: {path}")

    missing = set(descriptor.missing_values)
    site_columns = {name: site.columns for name, site in descriptor.sites.items()}
    times: list[float] = []
    labels: list[int] = []
    rows: dict[str, list[list[float]]] = {name: [] for name in site_columns}

    def number(token: str, line_number: int) -> float:
        if token in missing:
            return math.nan
        try:
            return float(token)
        except ValueError as e:
            raise ParseError(path, line_number, f"cannot parse number '{token}'") from e

    with open(path) as f:
        lines = tqdm(
            f,
            desc=f"Parsing {path.name}",
            unit=" lines",
            disable=(not progress) or (not sys.stderr.isatty()),
        )
        for line_number, line in enumerate(lines, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(descriptor.separator)
            if len(fields) != descriptor.column_count:
                raise ParseError(
                    path,
                    line_number,
                    f"expected {descriptor.column_count} columns, found {len(fields)}",
                )
            label = number(fields[descriptor.label_column], line_number)
            if math.isnan(label):
                raise ParseError(path, line_number, "missing activity label")
            code = int(label)
            if code not in descriptor.labels:
                raise UnknownLabelError(
                    f"{path}:{line_number}: unknown native label {code} for {descriptor.dataset_id}"
                )
            labels.append(code)
            if descriptor.time_column is not None:
                t = number(fields[descriptor.time_column], line_number)
                if math.isnan(t):
                    raise ParseError(path, line_number, "missing timestamp")
                times.append(t * descriptor.time_scale)
            for name, columns in site_columns.items():
                rows[name].append([number(fields[c], line_number) for c in columns])

    n = len(labels)
    if descriptor.time_column is None:
        timestamps = np.arange(n, dtype=np.float64) / descriptor.sample_rate
    else:
        timestamps = np.asarray(times, dtype=np.float64)
    channels = {
        name: np.asarray(values, dtype=np.float64).reshape(n, len(site_columns[name])).T.copy()
        for name, values in rows.items()
    }
    recording = Recording(
        dataset_id=descriptor.dataset_id,
        subject=subject_of(path, descriptor),
        sample_rate=descriptor.sample_rate,
        timestamps=timestamps,
        channels=channels,
        labels=np.asarray(labels, dtype=np.int64),
    )
    logger.debug(f"Parsed {n} samples from {path} (subject {recording.subject})")
    return recording


# ============================================================================
# Repair, units and resampling
# ============================================================================


def _missing_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """[start, stop) of every run of True in ``mask``."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def interpolate_missing(recording: Recording, max_gap: int = MAX_GAP) -> Recording:
    """Fill interior gaps of at most ``max_gap`` samples by linear interpolation in time.

    Leading and trailing gaps, and longer gaps, stay missing.
    """
    if max_gap < 0:
        raise ValueError(f"max_gap must be non-negative, got {max_gap}")
    t = recording.timestamps
    n = recording.num_samples
    repaired: dict[str, np.ndarray] = {}
    filled = 0
    for site, matrix in recording.channels.items():
        out = matrix.copy()
        for row in out:
            for start, stop in _missing_runs(np.isnan(row)):
                if start == 0 or stop == n or stop - start > max_gap:
                    continue
                row[start:stop] = np.interp(
                    t[start:stop], [t[start - 1], t[stop]], [row[start - 1], row[stop]]
                )
                filled += stop - start
        repaired[site] = out
    if filled:
        logger.debug(f"Interpolated {filled} missing samples in subject {recording.subject}")
    return dataclasses.replace(recording, channels=repaired)


def convert_units(recording: Recording, descriptor: DatasetDescriptor) -> Recording:
    """Scale every channel by its descriptor factor (to m/s^2, deg/s, uT)."""
    if recording.units_converted:
        raise UnitConversionError(
            f"recording of subject {recording.subject} is already in canonical units"
        )
    scaled = {}
    for site, matrix in recording.channels.items():
        scales = np.asarray(descriptor.sites[site].scales, dtype=np.float64)
        scaled[site] = matrix * scales[:, None]
    return dataclasses.replace(recording, channels=scaled, units_converted=True)


def _is_uniform(timestamps: np.ndarray, rate: float) -> bool:
    if len(timestamps) < 2:
        return True
    return bool(np.allclose(np.diff(timestamps), 1.0 / rate, rtol=0, atol=1e-9))


def _nearest_indices(source_times: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Index of the nearest source time per query; ties go to the earlier sample."""
    right = np.clip(np.searchsorted(source_times, query, side="left"), 0, len(source_times) - 1)
    left = np.clip(right - 1, 0, len(source_times) - 1)
    use_left = np.abs(query - source_times[left]) <= np.abs(source_times[right] - query)
    return np.where(use_left, left, right)


def resample(recording: Recording, target_rate: float = TARGET_RATE) -> Recording:
    """Linear interpolation of every channel onto a uniform ``target_rate`` grid.

    The grid starts at the first timestamp and holds floor(duration * rate) + 1
    samples. Labels take the nearest original sample. A recording already
    uniform at ``target_rate`` is returned as is.

    Raises:
        ValueError: the native rate is below ``target_rate``.
    """
    if recording.sample_rate + _RATE_TOLERANCE < target_rate:
        raise ValueError(
            f"refusing to upsample {recording.sample_rate} Hz to {target_rate} Hz"
        )
    if (
        abs(recording.sample_rate - target_rate) <= _RATE_TOLERANCE
        and _is_uniform(recording.timestamps, target_rate)
    ):
        return recording
    if recording.num_samples == 0:
        return dataclasses.replace(recording, sample_rate=target_rate)

    t = recording.timestamps
    count = int(math.floor(recording.duration * target_rate + 1e-9)) + 1
    grid = t[0] + np.arange(count, dtype=np.float64) / target_rate
    channels = {
        site: np.vstack([np.interp(grid, t, row) for row in matrix])
        if len(matrix)
        else np.zeros((0, count))
        for site, matrix in recording.channels.items()
    }
    labels = recording.labels[_nearest_indices(t, grid)]
    logger.debug(
        f"Resampled subject {recording.subject}: {recording.num_samples} samples at "
        f"{recording.sample_rate} Hz -> {count} at {target_rate} Hz"
    )
    return dataclasses.replace(
        recording, sample_rate=target_rate, timestamps=grid, channels=channels, labels=labels
    )


def harmonize(
    recording: Recording,
    descriptor: DatasetDescriptor,
    max_gap: int = MAX_GAP,
    target_rate: float = TARGET_RATE,
) -> Recording:
    """Gap repair, unit conversion, then resampling to ``target_rate``."""
    repaired = interpolate_missing(recording, max_gap=max_gap)
    return resample(convert_units(repaired, descriptor), target_rate=target_rate)


def load_harmonized(
    path: Union[str, Path],
    descriptor: DatasetDescriptor,
    max_gap: int = MAX_GAP,
    target_rate: float = TARGET_RATE,
    progress: bool = False,
) -> Recording:
    return harmonize(parse_recording(path, descriptor, progress), descriptor, max_gap, target_rate)


def find_raw_files(raw_dir: Union[str, Path], descriptor: DatasetDescriptor) -> list[Path]:
    raw_dir = Path(raw_dir)
    if not raw_dir.is_dir():
        raise FileNotFoundError(f"Raw data directory not found: {raw_dir}")
    files = sorted(p for p in raw_dir.rglob(descriptor.file_pattern) if p.is_file())
    if not files:
        raise FileNotFoundError(
            f"No files matching '{descriptor.file_pattern}' under {raw_dir}"
        )
    return files


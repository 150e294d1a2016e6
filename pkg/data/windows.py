"""Paired source/target windows, seeded splits and per-channel standardization.

A window pair holds the simultaneous source-site and target-site samples of
one 100-sample stretch of a recording. Collections are columnar: one array per
field, indexed by window.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger

from data.descriptor import LabelScheme
from data.recording import Recording

WINDOW_LENGTH = 100
SPLIT_PROPORTIONS = (0.30, 0.50, 0.20)
PARTITION_NAMES = ("train_source", "adapt", "test")


@dataclass(frozen=True)
class Window:
    """One model input: samples [channels, length] and an optional class index."""

    samples: np.ndarray
    label: Optional[int]
    pair_id: int


@dataclass(frozen=True)
class LabeledWindows:
    """Single-site windows [N, C, T] with class indices, used for supervised training."""

    windows: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.windows.ndim != 3:
            raise ValueError(f"windows must be [N, C, T], got {self.windows.shape}")
        if self.labels.shape != (len(self.windows),):
            raise ValueError(
                f"{len(self.windows)} windows but labels shaped {self.labels.shape}"
            )
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= len(self.class_names)
        ):
            raise ValueError("label index outside the class list")

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_channels(self) -> int:
        return self.windows.shape[1]

    def take(self, indices: np.ndarray) -> LabeledWindows:
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledWindows(self.windows[indices], self.labels[indices], self.class_names)


@dataclass(frozen=True)
class UnlabeledPairs:
    """Paired windows with the labels removed; the only input adaptation accepts."""

    source: np.ndarray
    target: np.ndarray
    pair_ids: np.ndarray

    def __post_init__(self) -> None:
        if len(self.source) != len(self.target) or len(self.source) != len(self.pair_ids):
            raise ValueError("source, target and pair ids must have one entry per window pair")

    def __len__(self) -> int:
        return len(self.source)

    def take(self, indices: np.ndarray) -> UnlabeledPairs:
        indices = np.asarray(indices, dtype=np.int64)
        return UnlabeledPairs(self.source[indices], self.target[indices], self.pair_ids[indices])


@dataclass(frozen=True)
class PairedWindows:
    """Labeled, time-aligned source/target window pairs."""

    source: np.ndarray
    target: np.ndarray
    labels: np.ndarray
    pair_ids: np.ndarray
    subjects: np.ndarray
    start_times: np.ndarray
    class_names: tuple[str, ...]
    source_site: str = "source"
    target_site: str = "target"

    def __post_init__(self) -> None:
        n = len(self.source)
        for name in ("target", "labels", "pair_ids", "subjects", "start_times"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"'{name}' has {len(getattr(self, name))} entries, expected {n}")
        if n and (self.source.ndim != 3 or self.target.ndim != 3):
            raise ValueError("source and target must be [N, C, T]")
        if n and self.source.shape[2] != self.target.shape[2]:
            raise ValueError("source and target windows differ in length")

    def __len__(self) -> int:
        return len(self.source)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def window_length(self) -> int:
        return self.source.shape[2]

    def take(self, indices: np.ndarray) -> PairedWindows:
        indices = np.asarray(indices, dtype=np.int64)
        return dataclasses.replace(
            self,
            source=self.source[indices],
            target=self.target[indices],
            labels=self.labels[indices],
            pair_ids=self.pair_ids[indices],
            subjects=self.subjects[indices],
            start_times=self.start_times[indices],
        )

    def swapped(self) -> PairedWindows:
        """Same pairs with the source and target sites exchanged."""
        return dataclasses.replace(
            self,
            source=self.target,
            target=self.source,
            source_site=self.target_site,
            target_site=self.source_site,
        )

    def strip_labels(self) -> UnlabeledPairs:
        return UnlabeledPairs(self.source, self.target, self.pair_ids)

    def source_windows(self) -> LabeledWindows:
        return LabeledWindows(self.source, self.labels, self.class_names)

    def target_windows(self) -> LabeledWindows:
        return LabeledWindows(self.target, self.labels, self.class_names)

    def window(self, index: int, site: str = "source") -> Window:
        samples = self.source[index] if site == "source" else self.target[index]
        return Window(samples, int(self.labels[index]), int(self.pair_ids[index]))

    def canonical_order(self) -> np.ndarray:
        """Indices sorting windows by (subject, start time, pair id)."""
        return np.lexsort((self.pair_ids, self.start_times, self.subjects.astype(str)))

    @classmethod
    def concat(cls, parts: Sequence[PairedWindows]) -> PairedWindows:
        if not parts:
            raise ValueError("nothing to concatenate")
        first = parts[0]
        for part in parts[1:]:
            if part.class_names != first.class_names or (
                part.source_site,
                part.target_site,
            ) != (first.source_site, first.target_site):
                raise ValueError("cannot concatenate windows with different classes or sites")
        return cls(
            source=np.concatenate([p.source for p in parts]),
            target=np.concatenate([p.target for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            pair_ids=np.concatenate([p.pair_ids for p in parts]),
            subjects=np.concatenate([p.subjects for p in parts]),
            start_times=np.concatenate([p.start_times for p in parts]),
            class_names=first.class_names,
            source_site=first.source_site,
            target_site=first.target_site,
        )


# ============================================================================
# Windowing
# ============================================================================


def majority_label(class_indices: np.ndarray, num_classes: int) -> int:
    """Most frequent class; ties go to the smaller index."""
    return int(np.argmax(np.bincount(class_indices, minlength=num_classes)))


def windowize(
    recording: Recording,
    scheme: LabelScheme,
    source_site: str,
    target_site: str,
    length: int = WINDOW_LENGTH,
    first_pair_id: int = 0,
) -> PairedWindows:
    """Cut a harmonized recording into consecutive non-overlapping window pairs.

    The trailing remainder is dropped, as is any pair with a missing sample at
    either site. Pair ids are assigned before dropping, so they stay unique and
    stable for a given recording order.
    """
    if length < 1:
        raise ValueError(f"window length must be positive, got {length}")
    classes = scheme.indices(recording.labels)
    src = recording.channels[source_site]
    tgt = recording.channels[target_site]
    count = recording.num_samples // length

    keep: list[int] = []
    labels: list[int] = []
    for w in range(count):
        s = slice(w * length, (w + 1) * length)
        if np.isnan(src[:, s]).any() or np.isnan(tgt[:, s]).any():
            continue
        keep.append(w)
        labels.append(majority_label(classes[s], scheme.num_classes))

    dropped = count - len(keep)
    if dropped:
        logger.debug(
            f"Dropped {dropped}/{count} windows with missing samples (subject {recording.subject})"
        )

    idx = np.asarray(keep, dtype=np.int64)
    starts = idx * length

    def cut(matrix: np.ndarray) -> np.ndarray:
        if not len(idx):
            return np.zeros((0, matrix.shape[0], length), dtype=np.float32)
        return np.stack([matrix[:, s : s + length] for s in starts]).astype(np.float32)

    return PairedWindows(
        source=cut(src),
        target=cut(tgt),
        labels=np.asarray(labels, dtype=np.int64),
        pair_ids=first_pair_id + idx,
        subjects=np.full(len(idx), recording.subject, dtype=object),
        start_times=recording.timestamps[starts] if len(idx) else np.zeros(0),
        class_names=scheme.class_names,
        source_site=source_site,
        target_site=target_site,
    )


# ============================================================================
# Splitting
# ============================================================================


@dataclass(frozen=True)
class WindowedSplit:
    train_source: PairedWindows
    adapt: PairedWindows
    test: PairedWindows
    seed: Optional[int]

    def partitions(self) -> dict[str, PairedWindows]:
        return dict(zip(PARTITION_NAMES, (self.train_source, self.adapt, self.test)))

    def swapped(self) -> WindowedSplit:
        return WindowedSplit(
            self.train_source.swapped(), self.adapt.swapped(), self.test.swapped(), self.seed
        )

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_source), len(self.adapt), len(self.test)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def partition_sizes(
    n: int, proportions: Sequence[float] = SPLIT_PROPORTIONS
) -> tuple[int, int, int]:
    first = _round_half_up(proportions[0] * n)
    second = _round_half_up(proportions[1] * n)
    second = min(second, n - first)
    sizes = (first, second, n - first - second)
    if min(sizes) < 1:
        raise ValueError(f"splitting {n} windows by {tuple(proportions)} leaves a partition empty")
    return sizes


def _check_proportions(proportions: Sequence[float]) -> None:
    if len(proportions) != 3 or any(p < 0 for p in proportions):
        raise ValueError(f"need three non-negative proportions, got {proportions}")
    if not math.isclose(sum(proportions), 1.0, abs_tol=1e-9):
        raise ValueError(f"proportions must sum to 1, got {sum(proportions)}")


def split_codes(
    windows: PairedWindows,
    proportions: Sequence[float] = SPLIT_PROPORTIONS,
    seed: int = 0,
    by_subject: bool = False,
) -> np.ndarray:
    """Partition code per window (0 train_source, 1 adapt, 2 test)."""
    _check_proportions(proportions)
    n = len(windows)
    if n < 3:
        raise ValueError(f"need at least 3 windows to split, got {n}")
    rng = np.random.default_rng(seed)
    order = windows.canonical_order()
    codes = np.empty(n, dtype=np.uint8)
    sizes = partition_sizes(n, proportions)

    if not by_subject:
        shuffled = order[rng.permutation(n)]
        bounds = np.cumsum(sizes)
        codes[shuffled[: bounds[0]]] = 0
        codes[shuffled[bounds[0] : bounds[1]]] = 1
        codes[shuffled[bounds[1] :]] = 2
        return codes

    subjects = np.asarray(windows.subjects).astype(str)
    unique = np.unique(subjects)
    if len(unique) < 3:
        raise ValueError(f"subject-wise split needs at least 3 subjects, got {len(unique)}")
    targets = np.cumsum(sizes)
    assigned = 0
    partition = 0
    for subject in unique[rng.permutation(len(unique))]:
        while partition < 2 and assigned >= targets[partition]:
            partition += 1
        members = subjects == subject
        codes[members] = partition
        assigned += int(members.sum())
    if len(np.unique(codes)) < 3:
        raise ValueError(f"subject-wise split of {len(unique)} subjects leaves a partition empty")
    return codes


def split_from_codes(
    windows: PairedWindows, codes: np.ndarray, seed: Optional[int]
) -> WindowedSplit:
    order = windows.canonical_order()
    codes = np.asarray(codes)
    parts = [windows.take(order[codes[order] == c]) for c in range(3)]
    return WindowedSplit(parts[0], parts[1], parts[2], seed)


def split(
    windows: PairedWindows,
    proportions: Sequence[float] = SPLIT_PROPORTIONS,
    seed: int = 0,
    by_subject: bool = False,
) -> WindowedSplit:
    """Seeded 30/50/20 partition at window granularity (or by subject).

    Windows are put in (subject, start time, pair id) order first, so the
    result depends only on the window set and the seed.
    """
    codes = split_codes(windows, proportions, seed, by_subject)
    result = split_from_codes(windows, codes, seed)
    logger.debug(f"Split {len(windows)} windows into {result.sizes()} (seed {seed})")
    return result


# ============================================================================
# Class distribution and standardization
# ============================================================================


def class_distribution(labels: np.ndarray, class_names: Sequence[str]) -> pd.DataFrame:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=len(class_names))
    total = int(counts.sum())
    return pd.DataFrame(
        {
            "class_index": np.arange(len(class_names)),
            "class_name": list(class_names),
            "count": counts,
            "fraction": counts / total if total else np.zeros(len(class_names)),
        }
    )


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, windows: np.ndarray) -> np.ndarray:
        return ((windows - self.mean[None, :, None]) / self.std[None, :, None]).astype(np.float32)


def fit_channel_stats(windows: np.ndarray) -> ChannelStats:
    """Per-channel mean and standard deviation over windows and time.

    Constant channels get unit deviation.
    """
    if len(windows) == 0:
        raise ValueError("cannot fit channel statistics on zero windows")
    values = np.asarray(windows, dtype=np.float64)
    mean = values.mean(axis=(0, 2))
    std = values.std(axis=(0, 2))
    std = np.where(std > 0, std, 1.0)
    return ChannelStats(mean, std)


def standardize_pairs(
    windows_split: WindowedSplit,
) -> tuple[WindowedSplit, dict[str, ChannelStats]]:
    """Standardize each site with statistics from the partition that trains on it.

    Source-site statistics come from ``train_source``; target-site statistics from
    ``adapt``. Labels are not read.
    """
    stats = {
        "source": fit_channel_stats(windows_split.train_source.source),
        "target": fit_channel_stats(windows_split.adapt.target),
    }

    def scaled(part: PairedWindows) -> PairedWindows:
        return dataclasses.replace(
            part,
            source=stats["source"].apply(part.source),
            target=stats["target"].apply(part.target),
        )

    return (
        WindowedSplit(
            scaled(windows_split.train_source),
            scaled(windows_split.adapt),
            scaled(windows_split.test),
            windows_split.seed,
        ),
        stats,
    )

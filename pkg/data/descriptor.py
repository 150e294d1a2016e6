"""Dataset descriptors and label schemes.

A descriptor is a YAML file describing one dataset's native text format: which
columns hold time, labels and each body site's sensor channels, the unit scale
that brings each channel to m/s^2, deg/s or uT, and how native activity codes
map onto the shared five-class set. Descriptors for Opportunity, PAMAP2 and
MHEALTH ship in ``data/descriptors``.
"""

from __future__ import annotations

import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import yaml

DESCRIPTOR_VERSION = 1
DESCRIPTOR_DIR = Path(__file__).parent / "descriptors"
DATA_ROOT_ENV = "IMU_TRANSFER_DATA_ROOT"

# canonical five-class ordering
FIVE_CLASS_NAMES = ("other", "sit", "stand", "lie", "walk")
OTHER = "other"


class UnknownLabelError(ValueError):
    """Raised for a native label the descriptor does not declare."""


class LabelSchemeKind(str, Enum):
    FIVE_CLASS = "five_class"
    ALL = "all"


@dataclass(frozen=True)
class SiteChannels:
    """Columns of one body site, with per-channel unit scale factors."""

    columns: tuple[int, ...]
    scales: tuple[float, ...]
    channel_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.columns:
            raise ValueError("a site needs at least one column")
        if len(self.scales) != len(self.columns):
            raise ValueError(
                f"{len(self.columns)} columns but {len(self.scales)} scale factors"
            )
        if self.channel_names and len(self.channel_names) != len(self.columns):
            raise ValueError("channel_names must name every column")

    @property
    def num_channels(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class DatasetDescriptor:
    dataset_id: str
    sample_rate: float
    column_count: int
    label_column: int
    labels: Mapping[int, str]
    five_class: Mapping[str, str]
    sites: Mapping[str, SiteChannels]
    source_site: str
    target_site: str
    separator: Optional[str] = None
    time_column: Optional[int] = None
    time_scale: float = 1.0
    missing_values: tuple[str, ...] = ("NaN", "nan")
    file_pattern: str = "*"
    subject_pattern: str = r"(.+)"
    comment: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        for site in (self.source_site, self.target_site):
            if site not in self.sites:
                raise ValueError(f"site '{site}' is not defined in descriptor {self.dataset_id}")
        if self.source_site == self.target_site:
            raise ValueError("source and target sites must differ")
        overlap = set(self.sites[self.source_site].columns) & set(
            self.sites[self.target_site].columns
        )
        if overlap:
            raise ValueError(f"source and target sites share columns {sorted(overlap)}")
        used = [self.label_column, *(c for s in self.sites.values() for c in s.columns)]
        if self.time_column is not None:
            used.append(self.time_column)
        if max(used) >= self.column_count or min(used) < 0:
            raise ValueError(
                f"column index outside 0..{self.column_count - 1} in descriptor {self.dataset_id}"
            )
        bad = set(self.five_class.values()) - set(FIVE_CLASS_NAMES)
        if bad:
            raise ValueError(f"five_class targets must be among {FIVE_CLASS_NAMES}, got {bad}")
        unknown = set(self.five_class) - set(self.labels.values())
        if unknown:
            raise ValueError(f"five_class maps undeclared activities {sorted(unknown)}")

    def label_scheme(self, kind: Union[LabelSchemeKind, str]) -> LabelScheme:
        kind = LabelSchemeKind(kind)
        if kind is LabelSchemeKind.FIVE_CLASS:
            return LabelScheme.five_class(self)
        return LabelScheme.all_labels(self)


@dataclass(frozen=True)
class LabelScheme:
    """Mapping from native activity codes to contiguous class indices."""

    name: str
    class_names: tuple[str, ...]
    code_to_index: Mapping[int, int]
    activity_to_index: Mapping[str, int]

    @classmethod
    def five_class(cls, descriptor: DatasetDescriptor) -> LabelScheme:
        codes: dict[int, int] = {}
        activities: dict[str, int] = {}
        for code, activity in descriptor.labels.items():
            index = FIVE_CLASS_NAMES.index(descriptor.five_class.get(activity, OTHER))
            codes[code] = index
            activities[activity] = index
        return cls(LabelSchemeKind.FIVE_CLASS.value, FIVE_CLASS_NAMES, codes, activities)

    @classmethod
    def all_labels(cls, descriptor: DatasetDescriptor) -> LabelScheme:
        ordered = sorted(descriptor.labels.items())
        codes = {code: i for i, (code, _) in enumerate(ordered)}
        activities = {activity: i for i, (_, activity) in enumerate(ordered)}
        names = tuple(activity for _, activity in ordered)
        name = f"{LabelSchemeKind.ALL.value}({descriptor.dataset_id})"
        return cls(name, names, codes, activities)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def indices(self, codes: np.ndarray) -> np.ndarray:
        """Vectorized native-code to class-index mapping."""
        codes = np.asarray(codes, dtype=np.int64)
        unknown = set(np.unique(codes).tolist()) - set(self.code_to_index)
        if unknown:
            raise UnknownLabelError(
                f"native labels {sorted(unknown)} are not in scheme {self.name}"
            )
        if codes.size == 0:
            return codes.copy()
        keys = np.array(sorted(self.code_to_index), dtype=np.int64)
        values = np.array([self.code_to_index[k] for k in keys.tolist()], dtype=np.int64)
        return values[np.searchsorted(keys, codes)]


def map_labels(native_label: Union[int, str], scheme: LabelScheme) -> int:
    """Class index of one native label, given as activity name or numeric code."""
    if isinstance(native_label, str):
        if native_label in scheme.activity_to_index:
            return scheme.activity_to_index[native_label]
        raise UnknownLabelError(f"unknown activity '{native_label}' for scheme {scheme.name}")
    code = int(native_label)
    if code in scheme.code_to_index:
        return scheme.code_to_index[code]
    raise UnknownLabelError(f"unknown native label {code} for scheme {scheme.name}")


# ============================================================================
# YAML loading
# ============================================================================


def _site(name: str, raw: Mapping[str, Any]) -> SiteChannels:
    try:
        columns = tuple(int(c) for c in raw["columns"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"site '{name}' needs a list of columns") from e
    scales = raw.get("scales", 1.0)
    if not isinstance(scales, Sequence):
        scales = [scales] * len(columns)
    return SiteChannels(
        columns=columns,
        scales=tuple(float(s) for s in scales),
        channel_names=tuple(raw.get("channel_names", ())),
    )


def descriptor_from_dict(raw: Mapping[str, Any]) -> DatasetDescriptor:
    version = raw.get("version", DESCRIPTOR_VERSION)
    if version != DESCRIPTOR_VERSION:
        raise ValueError(f"unsupported descriptor version {version}")
    known = {
        "version", "dataset_id", "sample_rate", "column_count", "label_column", "labels",
        "five_class", "sites", "source_site", "target_site", "separator", "time_column",
        "time_scale", "missing_values", "file_pattern", "subject_pattern", "comment",
    }  # fmt: skip
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown descriptor keys: {sorted(unknown)}")
    try:
        return DatasetDescriptor(
            dataset_id=str(raw["dataset_id"]),
            sample_rate=float(raw["sample_rate"]),
            column_count=int(raw["column_count"]),
            label_column=int(raw["label_column"]),
            labels={int(k): str(v) for k, v in raw["labels"].items()},
            five_class={str(k): str(v) for k, v in raw.get("five_class", {}).items()},
            sites={name: _site(name, site) for name, site in raw["sites"].items()},
            source_site=str(raw["source_site"]),
            target_site=str(raw["target_site"]),
            separator=raw.get("separator"),
            time_column=raw.get("time_column"),
            time_scale=float(raw.get("time_scale", 1.0)),
            missing_values=tuple(str(v) for v in raw.get("missing_values", ("NaN", "nan"))),
            file_pattern=str(raw.get("file_pattern", "*")),
            subject_pattern=str(raw.get("subject_pattern", r"(.+)")),
            comment=str(raw.get("comment", "")),
        )
    except KeyError as e:
        raise ValueError(f"descriptor is missing required key {e}") from e


def load_descriptor(path: Union[str, Path]) -> DatasetDescriptor:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Descriptor not found: {path}")
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, Mapping):
        raise ValueError(f"{path}: descriptor must be a mapping")
    return descriptor_from_dict(raw)


def builtin_descriptor(dataset_id: str) -> DatasetDescriptor:
    """Shipped descriptor for ``opportunity``, ``pamap2`` or ``mhealth``."""
    path = DESCRIPTOR_DIR / f"{dataset_id.lower()}.yaml"
    if not path.exists():
        available = sorted(p.stem for p in DESCRIPTOR_DIR.glob("*.yaml"))
        raise ValueError(f"no built-in descriptor for '{dataset_id}', available: {available}")
    return load_descriptor(path)


def resolve_data_path(path: Union[str, Path]) -> Path:
    """Relative paths are taken under $IMU_TRANSFER_DATA_ROOT when it is set."""
    path = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path

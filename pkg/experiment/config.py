"""Experiment configuration files.

Schema (``version: 1``)::

    version: 1
    name: three-way-synthetic        # optional, defaults to the file stem
    kind: three_way                  # three_way | domain_switch | all_labels |
                                     # size_sweep | loss_grid | baseline_compare
    dataset:                         # exactly one of archive / raw_dir / synthetic
      archive: opportunity.warc      # window archive written by `ingest`
      raw_dir: raw/pamap2            # raw files, ingested on the fly
      dataset_id: pamap2             # required with raw_dir
      descriptor: my.yaml            # optional descriptor override
      synthetic: {num_classes: 5, windows_per_class: 200}
    scheme: five_class               # five_class | all (raw ingest only)
    seed: 0                          # master seed
    repetitions: 1                   # baseline_compare defaults to 10
    fractions: [0.15, 0.33, 0.66, 1.0]
    methods: [unsupervised, lp, ft, lpft]
    loss: {kind: mae, regularization: l2}
    losses: [...]                    # loss_grid conditions, default: the ten-loss grid
    model: {conv_filters: 64, kernel_size: 5, hidden_size: 128}
    train: {learning_rate: 0.001, batch_size: 64, max_epochs: 100, patience: 10}
    adapt: {...}                     # TrainConfig overrides for adaptation
    baseline: {...}                  # TrainConfig overrides for LP/FT/LPFT
    standardize: true
    swap_sites: false
    workers: 1

Relative paths are resolved against the config file's directory, then against
``$IMU_TRANSFER_DATA_ROOT``. The config hash covers the paths as
written, so it does not depend on the working directory or the data root.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from data.descriptor import LabelSchemeKind, resolve_data_path
from data.synthetic import SyntheticConfig
from model.convlstm import CONV_FILTERS, HIDDEN_SIZE, KERNEL_SIZE
from training.config import (
    SWEEP_FRACTIONS,
    LossKind,
    LossSpec,
    Regularization,
    TrainConfig,
    loss_grid,
)

CONFIG_VERSION = 1
BASELINE_REPETITIONS = 10
BASELINE_FRACTIONS = (0.0, *SWEEP_FRACTIONS)
SEED_MODULUS = 2**31
DEFAULT_LOSS = LossSpec(LossKind.MAE, Regularization.L2)


class ConfigError(ValueError):
    """Raised for experiment configs that fail validation."""


class ExperimentKind(str, Enum):
    THREE_WAY = "three_way"
    DOMAIN_SWITCH = "domain_switch"
    ALL_LABELS = "all_labels"
    SIZE_SWEEP = "size_sweep"
    LOSS_GRID = "loss_grid"
    BASELINE_COMPARE = "baseline_compare"


class Method(str, Enum):
    UNSUPERVISED = "unsupervised"
    LP = "lp"
    FT = "ft"
    LPFT = "lpft"


FRACTION_KINDS = (ExperimentKind.SIZE_SWEEP, ExperimentKind.BASELINE_COMPARE)


def derive_seed(master: int, *keys: Any) -> int:
    """Stage seed from the master seed and a path of keys such as ("rep", 3, "adapt")."""
    text = "/".join(str(part) for part in (master, *keys))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % SEED_MODULUS


@dataclass(frozen=True)
class DatasetSource:
    archive: Optional[Path] = None
    raw_dir: Optional[Path] = None
    dataset_id: Optional[str] = None
    descriptor: Optional[Path] = None
    synthetic: Optional[SyntheticConfig] = None
    # paths as the config file spells them; the canonical form uses these
    written: Mapping[str, str] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        chosen = [
            name for name in ("archive", "raw_dir", "synthetic") if getattr(self, name) is not None
        ]
        if len(chosen) != 1:
            raise ConfigError(
                "dataset needs exactly one of archive, raw_dir or synthetic, "
                f"got {chosen or 'none'}"
            )
        if self.raw_dir is not None and not self.dataset_id:
            raise ConfigError("dataset.raw_dir needs dataset.dataset_id")

    @property
    def label(self) -> str:
        if self.synthetic is not None:
            return "synthetic"
        if self.dataset_id:
            return self.dataset_id
        return Path(str(self.archive)).stem

    def to_dict(self) -> dict[str, Any]:
        values: dict[str, Any] = {}
        for name in ("archive", "raw_dir", "dataset_id", "descriptor"):
            value = getattr(self, name)
            if value is not None:
                values[name] = self.written.get(name, str(value))
        if self.synthetic is not None:
            values["synthetic"] = dataclasses.asdict(self.synthetic)
        return values

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: Optional[Path] = None) -> DatasetSource:
        unknown = set(raw) - {"archive", "raw_dir", "dataset_id", "descriptor", "synthetic"}
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")

        def path(key: str) -> Optional[Path]:
            if raw.get(key) is None:
                return None
            value = Path(raw[key])
            if base_dir is not None and not value.is_absolute() and (base_dir / value).exists():
                return base_dir / value
            return resolve_data_path(value)

        synthetic = None
        if raw.get("synthetic") is not None:
            try:
                synthetic = SyntheticConfig(**raw["synthetic"])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid synthetic dataset: {e}") from e
        return cls(
            archive=path("archive"),
            raw_dir=path("raw_dir"),
            dataset_id=raw.get("dataset_id"),
            descriptor=path("descriptor"),
            synthetic=synthetic,
            written={
                key: str(raw[key])
                for key in ("archive", "raw_dir", "descriptor")
                if raw.get(key) is not None
            },
        )


@dataclass(frozen=True)
class ModelWidths:
    conv_filters: int = CONV_FILTERS
    kernel_size: int = KERNEL_SIZE
    hidden_size: int = HIDDEN_SIZE


def _train_config(raw: Optional[Mapping[str, Any]], base: TrainConfig, what: str) -> TrainConfig:
    if not raw:
        return base
    try:
        return TrainConfig.from_dict({**base.to_dict(), **raw})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what} settings: {e}") from e


def _loss_spec(raw: Mapping[str, Any], what: str) -> LossSpec:
    try:
        return LossSpec.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what}: {e}") from e


@dataclass(frozen=True)
class ExperimentConfig:
    kind: ExperimentKind
    dataset: DatasetSource
    name: str = "experiment"
    scheme: LabelSchemeKind = LabelSchemeKind.FIVE_CLASS
    seed: int = 0
    repetitions: Optional[int] = None
    fractions: Optional[tuple[float, ...]] = None
    methods: tuple[Method, ...] = tuple(Method)
    loss: LossSpec = DEFAULT_LOSS
    losses: Optional[tuple[LossSpec, ...]] = None
    model: ModelWidths = field(default_factory=ModelWidths)
    train: TrainConfig = field(default_factory=TrainConfig)
    adapt: Optional[TrainConfig] = None
    baseline: Optional[TrainConfig] = None
    standardize: bool = True
    swap_sites: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        object.__setattr__(self, "scheme", LabelSchemeKind(self.scheme))
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        if self.kind is ExperimentKind.ALL_LABELS:
            object.__setattr__(self, "scheme", LabelSchemeKind.ALL)
        if self.repetitions is None:
            default = BASELINE_REPETITIONS if self.kind is ExperimentKind.BASELINE_COMPARE else 1
            object.__setattr__(self, "repetitions", default)
        if self.fractions is None:
            default_fractions = (
                BASELINE_FRACTIONS
                if self.kind is ExperimentKind.BASELINE_COMPARE
                else SWEEP_FRACTIONS
            )
            object.__setattr__(self, "fractions", default_fractions)
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions or ()))
        if self.losses is None:
            object.__setattr__(self, "losses", tuple(loss_grid()))
        if self.adapt is None:
            object.__setattr__(self, "adapt", self.train)
        if self.baseline is None:
            object.__setattr__(self, "baseline", self.train)

    def validate(self) -> None:
        """Raise ConfigError for settings no run could satisfy; touches no data."""
        if int(self.repetitions or 0) < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.kind in FRACTION_KINDS:
            fractions = self.fractions or ()
            if not fractions:
                raise ConfigError(f"{self.kind.value} needs at least one fraction")
            if any(not 0.0 <= f <= 1.0 for f in fractions):
                raise ConfigError(f"fractions must lie in [0, 1], got {list(fractions)}")
            if len(set(fractions)) != len(fractions):
                raise ConfigError(f"duplicate fractions: {list(fractions)}")
        if self.kind is ExperimentKind.BASELINE_COMPARE and not self.methods:
            raise ConfigError("baseline_compare needs at least one method")
        if self.kind is ExperimentKind.LOSS_GRID and not self.losses:
            raise ConfigError("loss_grid needs at least one loss")
        if self.kind is ExperimentKind.LOSS_GRID:
            labels = [spec.label for spec in self.losses or ()]
            if len(set(labels)) != len(labels):
                raise ConfigError(f"loss_grid conditions must be distinct, got {labels}")
        for what in ("archive", "raw_dir", "descriptor"):
            value = getattr(self.dataset, what)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"dataset.{what} not found: {value}")

    def to_dict(self) -> dict[str, Any]:
        """Canonical form; ``workers`` is left out as it cannot change results."""
        return {
            "version": CONFIG_VERSION,
            "name": self.name,
            "kind": self.kind.value,
            "dataset": self.dataset.to_dict(),
            "scheme": self.scheme.value,
            "seed": self.seed,
            "repetitions": self.repetitions,
            "fractions": list(self.fractions or ()),
            "methods": [m.value for m in self.methods],
            "loss": self.loss.to_dict(),
            "losses": [spec.to_dict() for spec in self.losses or ()],
            "model": dataclasses.asdict(self.model),
            "train": self.train.to_dict(),
            "adapt": self.adapt.to_dict() if self.adapt else None,
            "baseline": self.baseline.to_dict() if self.baseline else None,
            "standardize": self.standardize,
            "swap_sites": self.swap_sites,
        }

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def replace(self, **changes: Any) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(
        cls, raw: Mapping[str, Any], base_dir: Optional[Path] = None, name: str = "experiment"
    ) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)} | {"version"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        version = raw.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version} (expected {CONFIG_VERSION})")
        if "kind" not in raw or "dataset" not in raw:
            raise ConfigError("experiment config needs 'kind' and 'dataset'")
        if not isinstance(raw["dataset"], Mapping):
            raise ConfigError("'dataset' must be a mapping")

        train = _train_config(raw.get("train"), TrainConfig(), "train")
        try:
            widths = ModelWidths(**(raw.get("model") or {}))
            kind = ExperimentKind(raw["kind"])
            scheme = LabelSchemeKind(raw.get("scheme", LabelSchemeKind.FIVE_CLASS))
            methods = tuple(Method(m) for m in raw.get("methods", [m.value for m in Method]))
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

        losses = raw.get("losses")
        fractions = raw.get("fractions")
        return cls(
            kind=kind,
            dataset=DatasetSource.from_dict(raw["dataset"], base_dir),
            name=str(raw.get("name", name)),
            scheme=scheme,
            seed=int(raw.get("seed", 0)),
            repetitions=raw.get("repetitions"),
            fractions=tuple(fractions) if fractions is not None else None,
            methods=methods,
            loss=_loss_spec(raw["loss"], "loss") if raw.get("loss") else DEFAULT_LOSS,
            losses=(
                tuple(_loss_spec(spec, "losses entry") for spec in losses)
                if losses is not None
                else None
            ),
            model=widths,
            train=train,
            adapt=_train_config(raw.get("adapt"), train, "adapt"),
            baseline=_train_config(raw.get("baseline"), train, "baseline"),
            standardize=bool(raw.get("standardize", True)),
            swap_sites=bool(raw.get("swap_sites", False)),
            workers=int(raw.get("workers", 1)),
        )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Experiment config not found: {path}")
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: expected a YAML mapping at the top level")
    return ExperimentConfig.from_dict(raw, base_dir=path.parent, name=path.stem)


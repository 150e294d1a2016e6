"""Loss and optimizer configuration shared by every training path."""

from __future__ import annotations

import dataclasses
from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Union

from data.descriptor import LabelSchemeKind
from model.convlstm import DROPOUT_RATE
from numerics.optim import DEFAULT_CLIP_NORM, DEFAULT_EPSILON, DEFAULT_LEARNING_RATE, DEFAULT_RHO

DEFAULT_BATCH_SIZE = 64
DEFAULT_MAX_EPOCHS = 100
DEFAULT_PATIENCE = 10
VALIDATION_FRACTION = 0.1
SWEEP_FRACTIONS = (0.15, 0.33, 0.66, 1.0)


class LossKind(str, Enum):
    MAE = "mae"
    MSE = "mse"
    MSLE = "msle"
    COSINE = "cosine"


class Regularization(str, Enum):
    NONE = "none"
    L1 = "l1"
    L2 = "l2"


class RegularizationTarget(str, Enum):
    EMBEDDER_WEIGHTS = "embedder_weights"
    EMBEDDING_ACTIVATIONS = "embedding_activations"


DEFAULT_STRENGTH = {Regularization.NONE: 0.0, Regularization.L1: 1e-5, Regularization.L2: 1e-4}

_LOSS_LABELS = {
    LossKind.MAE: "MAE",
    LossKind.MSE: "MSE",
    LossKind.MSLE: "MSLE",
    LossKind.COSINE: "Cosine sim",
}


@dataclass(frozen=True)
class LossSpec:
    """Replication loss kind plus an optional L1/L2 penalty of strength ``strength``.

    ``strength`` defaults to 1e-5 for L1, 1e-4 for L2 and 0 without
    regularization. A zero strength is only valid without regularization.
    """

    kind: LossKind = LossKind.MAE
    regularization: Regularization = Regularization.NONE
    target: RegularizationTarget = RegularizationTarget.EMBEDDER_WEIGHTS
    strength: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LossKind(self.kind))
        object.__setattr__(self, "regularization", Regularization(self.regularization))
        object.__setattr__(self, "target", RegularizationTarget(self.target))
        if self.strength is None:
            object.__setattr__(self, "strength", DEFAULT_STRENGTH[self.regularization])
        strength = float(self.strength)  # type: ignore[arg-type]
        object.__setattr__(self, "strength", strength)
        if strength < 0:
            raise ValueError(f"regularization strength must be non-negative, got {strength}")
        if (strength == 0) != (self.regularization is Regularization.NONE):
            raise ValueError(
                f"strength {strength} is inconsistent with regularization "
                f"'{self.regularization.value}': it must be 0 exactly when there is none"
            )

    @property
    def label(self) -> str:
        """Display name such as ``MAE + L2 reg``."""
        name = _LOSS_LABELS[self.kind]
        if self.regularization is Regularization.NONE:
            return name
        return f"{name} + {self.regularization.value.upper()} reg"

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "regularization": self.regularization.value,
            "target": self.target.value,
            "strength": self.strength,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> LossSpec:
        unknown = set(raw) - {"kind", "regularization", "target", "strength"}
        if unknown:
            raise ValueError(f"unknown loss keys: {sorted(unknown)}")
        return cls(**raw)


def loss_grid(
    target: RegularizationTarget = RegularizationTarget.EMBEDDER_WEIGHTS,
) -> list[LossSpec]:
    """The ten replication losses compared against each other, in report order."""
    plain = [
        LossSpec(kind) for kind in (LossKind.MSE, LossKind.MSLE, LossKind.MAE, LossKind.COSINE)
    ]
    regularized = [
        LossSpec(kind, reg, target)
        for reg in (Regularization.L1, Regularization.L2)
        for kind in (LossKind.COSINE, LossKind.MAE, LossKind.MSE)
    ]
    return plain + regularized


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    max_epochs: int = DEFAULT_MAX_EPOCHS
    patience: int = DEFAULT_PATIENCE
    clip_norm: Optional[float] = DEFAULT_CLIP_NORM
    seed: int = 0
    scheme: LabelSchemeKind = LabelSchemeKind.FIVE_CLASS
    fraction: float = 1.0
    validation_fraction: float = VALIDATION_FRACTION
    dropout: float = DROPOUT_RATE
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON
    progress: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", LabelSchemeKind(self.scheme))
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be at least 1, got {self.batch_size}")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError(f"clip norm must be positive or None, got {self.clip_norm}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def replace(self, **changes: Any) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        values = dataclasses.asdict(self)
        values["scheme"] = self.scheme.value
        return values

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**raw)


LossLike = Union[LossSpec, Mapping[str, Any]]


def as_loss_spec(value: LossLike) -> LossSpec:
    return value if isinstance(value, LossSpec) else LossSpec.from_dict(value)

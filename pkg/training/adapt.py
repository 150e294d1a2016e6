"""Unsupervised adaptation of a source model to a new body site.

The target embedder E_T starts as a copy of the source embedder E_S and is
trained so that, on every simultaneously recorded window pair, its embedding of
the target window replicates E_S's embedding of the source window. The source
classifier head is then transplanted unchanged (W_T = W_S). Target labels are
never needed: the adaptation input is ``UnlabeledPairs``.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from loguru import logger

from data.windows import LabeledWindows, UnlabeledPairs
from model.convlstm import (
    ModelParams,
    check_window_batch,
    classifier_names,
    embed_batch,
    embed_tensor,
    embedder_kernel_names,
    embedder_names,
    init_target_from_source,
    random_target_model,
    transplant_classifier,
)
from numerics.tensor import Tensor
from training.config import LossSpec, TrainConfig
from training.losses import reconstruction_loss, replication_loss
from training.supervised import (
    INIT_STREAM,
    SHUFFLE_STREAM,
    TrainHistory,
    holdout_split,
    minimize,
    stream,
    subsample,
    train_supervised,
)


@dataclass(frozen=True)
class AdaptReport:
    """Held-out reconstruction loss of the adapted embedder, per epoch.

    ``final_loss`` is the loss of the returned parameters (best epoch, or the
    initial copy of E_S when no epoch improved on it).
    """

    final_loss: float
    trajectory: tuple[float, ...]
    epochs_run: int
    initial_loss: float = float("nan")
    best_epoch: int = 0
    loss: str = ""

    def __post_init__(self) -> None:
        if len(self.trajectory) != self.epochs_run:
            raise ValueError(
                f"trajectory has {len(self.trajectory)} entries for {self.epochs_run} epochs"
            )

    @classmethod
    def from_history(cls, history: TrainHistory, spec: LossSpec) -> AdaptReport:
        return cls(
            final_loss=history.best_validation_loss,
            trajectory=history.validation_loss,
            epochs_run=history.epochs_run,
            initial_loss=history.initial_validation_loss,
            best_epoch=history.best_epoch,
            loss=spec.label,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "loss": self.loss,
            "final_loss": self.final_loss,
            "initial_loss": self.initial_loss,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "trajectory": list(self.trajectory),
        }


def _check_pairs(source: ModelParams, pairs: Any) -> UnlabeledPairs:
    if not isinstance(pairs, UnlabeledPairs):
        raise TypeError(
            f"adaptation takes UnlabeledPairs, got {type(pairs).__name__}; "
            "strip labels with PairedWindows.strip_labels()"
        )
    if len(pairs) == 0:
        raise ValueError("cannot adapt on zero window pairs")
    if pairs.source.ndim != 3 or pairs.target.ndim != 3:
        raise ValueError("window pairs must be [N, C, T] at both sites")
    check_window_batch(source.meta, pairs.source[:1])
    return pairs


def adapt_unsupervised(
    source: ModelParams,
    pairs: UnlabeledPairs,
    spec: LossSpec,
    config: TrainConfig,
) -> tuple[ModelParams, AdaptReport]:
    """Train E_T to replicate E_S on paired windows, then transplant the head.

    ``config.fraction`` of the pairs is used and ``validation_fraction`` of
    those is held out to track the reconstruction loss for early stopping.
    ``source`` is read only.
    """
    pairs = subsample(_check_pairs(source, pairs), config.fraction, config.seed)
    if len(pairs) == 0:
        raise ValueError(f"fraction {config.fraction} leaves no window pairs")
    target_channels = pairs.target.shape[1]
    target = init_target_from_source(
        source, target_channels, seed=int(stream(config.seed, INIT_STREAM).integers(2**31))
    )
    meta = target.meta
    # frozen source embeddings, computed once per pair
    e_source = embed_batch(source, pairs.source)
    target_windows = check_window_batch(meta, pairs.target)

    names = embedder_names(meta)
    kernels = embedder_kernel_names(meta)
    train_idx, val_idx = holdout_split(len(pairs), config.validation_fraction, config.seed)
    if len(val_idx) == 0:
        val_idx = train_idx

    def objective(
        tensors: Mapping[str, Tensor], batch: np.ndarray, rng: np.random.Generator
    ) -> Tensor:
        e_target = embed_tensor(tensors, Tensor(target_windows[batch]), meta)
        weights = {name: tensors[name] for name in kernels}
        return replication_loss(e_source[batch], e_target, spec, weights)

    def validate(arrays: Mapping[str, np.ndarray]) -> float:
        e_target = embed_batch(target.with_arrays(arrays), target_windows[val_idx])
        return reconstruction_loss(e_source[val_idx], e_target, spec.kind).item()

    logger.info(
        f"Adapting {source.meta.in_channels}-channel source to {target_channels}-channel "
        f"target on {len(pairs)} pairs with {spec.label}"
    )
    start = {name: target.arrays()[name] for name in names}
    best, history = minimize(
        start,
        objective,
        train_idx,
        validate,
        config,
        stream(config.seed, SHUFFLE_STREAM),
        desc=f"Adapt {spec.label}",
    )
    adapted = transplant_classifier(source, target.with_arrays(best))
    report = AdaptReport.from_history(history, spec)
    logger.info(
        f"Adaptation done: reconstruction loss {report.initial_loss:.6f} -> "
        f"{report.final_loss:.6f} in {report.epochs_run} epochs"
    )
    return adapted, report


def untrained_target(source: ModelParams, target_channels: int, seed: int = 0) -> ModelParams:
    """E_T initialized from E_S with no replication training, source head transplanted.

    With equal channel counts this is M_S itself applied to the target site.
    """
    return transplant_classifier(
        source,
        init_target_from_source(
            source, target_channels, seed=int(stream(seed, INIT_STREAM).integers(2**31))
        ),
    )


def random_target(source: ModelParams, target_channels: int, seed: int = 0) -> ModelParams:
    """Randomly initialized, untrained E_T carrying the source head."""
    return random_target_model(source, target_channels, seed)


def fine_tune_head(
    adapted: ModelParams,
    data: LabeledWindows,
    config: TrainConfig,
    trainable: Optional[list[str]] = None,
) -> tuple[ModelParams, TrainHistory]:
    """Optional supervised pass over the transplanted head with labeled target windows."""
    return train_supervised(
        adapted,
        data,
        config,
        trainable=trainable or classifier_names(adapted.meta),
        desc="Head fine-tune",
    )

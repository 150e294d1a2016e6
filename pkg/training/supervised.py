"""Mini-batch RMSprop training with early stopping, and supervised classification.

``minimize`` is the one optimization loop: it shuffles the training indices each
epoch, differentiates the objective per mini-batch, clips gradients by global
norm, applies RMSprop, and keeps the parameters with the lowest validation loss
seen so far (the initial parameters included).
"""

from __future__ import annotations

import math
import sys
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Callable, Optional, TypeVar

import numpy as np
from loguru import logger
from tqdm import tqdm

from data.windows import LabeledWindows
from model.convlstm import (
    ModelParams,
    check_window_batch,
    classifier_names,
    dropout_mask,
    embed_batch,
    embed_tensor,
    head_probabilities,
    logits_tensor,
    tensors_of,
)
from numerics.optim import RmspropState, clip_by_global_norm, rmsprop_step
from numerics.tensor import Tensor, forward_backward, softmax_cross_entropy
from training.config import TrainConfig

# rng streams derived from a training seed
SUBSAMPLE_STREAM = 0
HOLDOUT_STREAM = 1
SHUFFLE_STREAM = 2
INIT_STREAM = 3

Objective = Callable[[Mapping[str, Tensor], np.ndarray, np.random.Generator], Tensor]
Validator = Callable[[Mapping[str, np.ndarray]], float]
Subsettable = TypeVar("Subsettable")


def stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


@dataclass(frozen=True)
class TrainHistory:
    """Per-epoch losses of one ``minimize`` call.

    ``best_epoch`` is 0 when no epoch improved on the initial parameters.
    """

    train_loss: tuple[float, ...]
    validation_loss: tuple[float, ...]
    initial_validation_loss: float
    best_epoch: int

    @property
    def epochs_run(self) -> int:
        return len(self.validation_loss)

    @property
    def best_validation_loss(self) -> float:
        if self.best_epoch == 0:
            return self.initial_validation_loss
        return self.validation_loss[self.best_epoch - 1]

    def best_so_far(self) -> list[float]:
        """Running minimum of the validation loss, starting from the initial value."""
        return np.minimum.accumulate(
            np.asarray([self.initial_validation_loss, *self.validation_loss])
        ).tolist()

    def to_dict(self) -> dict[str, Any]:
        return {
            "train_loss": list(self.train_loss),
            "validation_loss": list(self.validation_loss),
            "initial_validation_loss": self.initial_validation_loss,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
        }


# ============================================================================
# Data selection
# ============================================================================


def subset_size(n: int, fraction: float) -> int:
    """round(fraction * n), halves rounded up."""
    return int(math.floor(fraction * n + 0.5))


def subsample(windows: Subsettable, fraction: float, seed: int) -> Subsettable:
    """Seeded uniform subset of round(fraction * N) windows, in original order.

    Works on any window collection with ``__len__`` and ``take``.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(windows)  # type: ignore[arg-type]
    if fraction == 1.0:
        return windows
    size = subset_size(n, fraction)
    chosen = np.sort(stream(seed, SUBSAMPLE_STREAM).choice(n, size=size, replace=False))
    return windows.take(chosen)  # type: ignore[attr-defined]


def holdout_split(
    n: int, validation_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """(train, validation) indices; validation is empty for tiny sets or fraction 0."""
    order = stream(seed, HOLDOUT_STREAM).permutation(n)
    size = subset_size(n, validation_fraction) if n >= 2 else 0
    if validation_fraction > 0 and n >= 2:
        size = max(size, 1)
    return np.sort(order[size:]), np.sort(order[:size])


# ============================================================================
# Optimization loop
# ============================================================================


def minimize(
    params: Mapping[str, np.ndarray],
    objective: Objective,
    train_indices: np.ndarray,
    validate: Validator,
    config: TrainConfig,
    rng: np.random.Generator,
    desc: str = "Training",
) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """RMSprop on ``objective`` with early stopping on ``validate``.

    ``objective(tensors, batch_indices, rng)`` returns the scalar mini-batch
    loss. Training stops after ``config.patience`` epochs without a strictly
    lower validation loss; the best parameters are returned.
    """
    current = {name: np.asarray(value) for name, value in params.items()}
    state = RmspropState.zeros_like(
        current, rho=config.rho, learning_rate=config.learning_rate, epsilon=config.epsilon
    )
    best = current
    best_loss = initial = float(validate(current))
    best_epoch = 0
    stale = 0
    train_history: list[float] = []
    validation_history: list[float] = []

    epochs = tqdm(
        range(1, config.max_epochs + 1),
        desc=desc,
        unit=" epoch",
        disable=(not config.progress) or (not sys.stderr.isatty()),
    )
    for epoch in epochs:
        order = rng.permutation(train_indices)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = forward_backward(
                lambda _inputs, tensors, batch=batch: objective(tensors, batch, rng), {}, current
            )
            grads, _ = clip_by_global_norm(grads, config.clip_norm)
            current, state = rmsprop_step(current, grads, state)
            total += loss.item() * len(batch)
        train_history.append(total / max(len(order), 1))

        val = float(validate(current))
        validation_history.append(val)
        if val < best_loss:
            best, best_loss, best_epoch, stale = current, val, epoch, 0
        else:
            stale += 1
        logger.debug(
            f"{desc} epoch {epoch}: train {train_history[-1]:.6f}, validation {val:.6f}"
        )
        if stale >= config.patience:
            logger.info(f"{desc}: early stop after epoch {epoch} (best epoch {best_epoch})")
            break

    history = TrainHistory(
        tuple(train_history), tuple(validation_history), initial, best_epoch
    )
    return dict(best), history


# ============================================================================
# Supervised classification
# ============================================================================


def mean_cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    picked = probabilities[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.clip(picked, 1e-12, None))))


def _check_labeled(model: ModelParams, data: LabeledWindows) -> None:
    if len(data) == 0:
        raise ValueError("cannot train on an empty labeled window set")
    if data.num_classes != model.meta.num_classes:
        raise ValueError(
            f"data has {data.num_classes} classes, model expects {model.meta.num_classes}"
        )
    check_window_batch(model.meta, data.windows[:1])
    present = np.unique(data.labels)
    if len(present) == 1:
        logger.warning(f"training data holds a single class ({data.class_names[present[0]]})")


def train_supervised(
    init: ModelParams,
    data: LabeledWindows,
    config: TrainConfig,
    trainable: Optional[Iterable[str]] = None,
    desc: str = "Supervised",
) -> tuple[ModelParams, TrainHistory]:
    """Cross-entropy training of ``trainable`` parameters (all by default).

    ``config.fraction`` of ``data`` is used; 10% of it (``validation_fraction``)
    is held out for early stopping. Dropout is applied to the embedding during
    training only. When only classifier parameters are trainable the frozen
    embeddings are computed once.
    """
    _check_labeled(init, data)
    data = subsample(data, config.fraction, config.seed)
    if len(data) == 0:
        raise ValueError(f"fraction {config.fraction} leaves no labeled windows")
    names: Sequence[str] = list(trainable) if trainable is not None else list(init.arrays())
    train_idx, val_idx = holdout_split(len(data), config.validation_fraction, config.seed)
    if len(val_idx) == 0:
        val_idx = train_idx
    head_only = set(names) <= set(classifier_names(init.meta))
    frozen = tensors_of(init, [n for n in init.arrays() if n not in names])
    windows = np.asarray(data.windows, dtype=np.float32)
    labels = np.asarray(data.labels, dtype=np.int64)
    cached = embed_batch(init, windows) if head_only else None

    def objective(
        tensors: Mapping[str, Tensor], batch: np.ndarray, rng: np.random.Generator
    ) -> Tensor:
        merged = {**frozen, **tensors}
        if cached is not None:
            embeddings = Tensor(cached[batch])
        else:
            embeddings = embed_tensor(merged, Tensor(windows[batch]), init.meta)
        mask = dropout_mask(rng, embeddings.shape, config.dropout) if config.dropout else None
        return softmax_cross_entropy(logits_tensor(merged, embeddings, mask), labels[batch])

    def validate(arrays: Mapping[str, np.ndarray]) -> float:
        model = init.with_arrays(arrays)
        if cached is not None:
            probabilities = head_probabilities(model, cached[val_idx])
        else:
            probabilities = head_probabilities(model, embed_batch(model, windows[val_idx]))
        return mean_cross_entropy(probabilities, labels[val_idx])

    start = {name: init.arrays()[name] for name in names}
    best, history = minimize(
        start,
        objective,
        train_idx,
        validate,
        config,
        stream(config.seed, SHUFFLE_STREAM),
        desc=desc,
    )
    logger.info(
        f"{desc}: {history.epochs_run} epochs, best validation loss "
        f"{history.best_validation_loss:.4f} at epoch {history.best_epoch}"
    )
    return init.with_arrays(best), history


def accuracy(model: ModelParams, data: LabeledWindows) -> float:
    if len(data) == 0:
        raise ValueError("accuracy of an empty window set")
    predictions = np.argmax(head_probabilities(model, embed_batch(model, data.windows)), axis=1)
    return float(np.mean(predictions == data.labels))

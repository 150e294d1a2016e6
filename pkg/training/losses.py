"""Embedding-replication losses.

The replication objective compares the frozen source embeddings e_S with the
target embedder's output e_T on the same window pairs; it is zero exactly when
e_T == e_S.
"""

from __future__ import annotations

from collections.abc import Mapping
from typing import Optional

from numerics.tensor import (
    ArrayLike,
    ShapeError,
    Tensor,
    absolute,
    as_tensor,
    clamp_min,
    cosine_distance,
    log1p,
    mul,
    reduce_mean,
    reduce_sum,
    square,
    sub,
)
from training.config import LossKind, LossSpec, Regularization, RegularizationTarget

# log1p needs inputs above -1; LSTM outputs live in (-1, 1)
MSLE_FLOOR = -1.0 + 1e-4


def reconstruction_loss(e_source: ArrayLike, e_target: ArrayLike, kind: LossKind) -> Tensor:
    e_source, e_target = as_tensor(e_source), as_tensor(e_target)
    if e_source.shape != e_target.shape or e_source.ndim != 2:
        raise ShapeError(
            f"replication loss needs two [N, d] batches of equal shape, "
            f"got {e_source.shape} and {e_target.shape}"
        )
    if kind is LossKind.MAE:
        return reduce_mean(absolute(sub(e_source, e_target)))
    if kind is LossKind.MSE:
        return reduce_mean(square(sub(e_source, e_target)))
    if kind is LossKind.MSLE:
        log_source = log1p(clamp_min(e_source, MSLE_FLOOR))
        log_target = log1p(clamp_min(e_target, MSLE_FLOOR))
        return reduce_mean(square(sub(log_source, log_target)))
    if kind is LossKind.COSINE:
        return reduce_mean(cosine_distance(e_source, e_target))
    raise ValueError(f"unknown loss kind {kind!r}")


def _norm(value: Tensor, regularization: Regularization) -> Tensor:
    if regularization is Regularization.L1:
        return reduce_sum(absolute(value))
    return reduce_sum(square(value))


def regularization_penalty(
    spec: LossSpec, e_target: Tensor, weights: Mapping[str, Tensor]
) -> Tensor:
    """Unscaled L1 or L2 penalty of the configured target.

    Embedder weights: summed norm of the conv kernels and LSTM weight matrices.
    Embedding activations: norm of e_T averaged over the batch.
    """
    if spec.regularization is Regularization.NONE:
        return Tensor(0.0)
    if spec.target is RegularizationTarget.EMBEDDING_ACTIVATIONS:
        return mul(_norm(e_target, spec.regularization), 1.0 / e_target.shape[0])
    if not weights:
        raise ValueError("weight regularization needs the embedder weight tensors")
    total: Tensor = Tensor(0.0)
    for name in sorted(weights):
        total = total + _norm(weights[name], spec.regularization)
    return total


def replication_loss(
    e_source: ArrayLike,
    e_target: ArrayLike,
    spec: LossSpec,
    weights: Optional[Mapping[str, Tensor]] = None,
) -> Tensor:
    """Reconstruction term of ``spec.kind`` plus ``strength`` times the penalty.

    ``weights`` are the embedder kernels to penalize when the regularization
    target is the embedder weights; they must be the same tensors that produced
    ``e_target`` for gradients to flow into them.
    """
    e_target = as_tensor(e_target)
    loss = reconstruction_loss(e_source, e_target, spec.kind)
    if spec.regularization is Regularization.NONE:
        return loss
    penalty = regularization_penalty(spec, e_target, weights or {})
    return loss + mul(penalty, spec.strength)

"""RMSprop updates and global-norm gradient clipping over named float32 arrays."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from numerics.tensor import DTYPE, NonFiniteError, ShapeError

DEFAULT_RHO = 0.9
DEFAULT_EPSILON = 1e-8
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_CLIP_NORM = 10.0


@dataclass(frozen=True)
class RmspropState:
    """Per-parameter running mean of squared gradients plus hyperparameters."""

    accumulators: Mapping[str, np.ndarray] = field(default_factory=dict)
    rho: float = DEFAULT_RHO
    learning_rate: float = DEFAULT_LEARNING_RATE
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.learning_rate < 0 or self.epsilon < 0:
            raise ValueError("learning rate and epsilon must be non-negative")

    @classmethod
    def zeros_like(
        cls,
        params: Mapping[str, np.ndarray],
        rho: float = DEFAULT_RHO,
        learning_rate: float = DEFAULT_LEARNING_RATE,
        epsilon: float = DEFAULT_EPSILON,
    ) -> RmspropState:
        accumulators = {name: np.zeros_like(p, dtype=DTYPE) for name, p in params.items()}
        return cls(accumulators, rho=rho, learning_rate=learning_rate, epsilon=epsilon)


def rmsprop_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: RmspropState,
) -> tuple[dict[str, np.ndarray], RmspropState]:
    """Apply one RMSprop update; inputs are left untouched.

    ``s' = rho*s + (1-rho)*g^2`` and ``p' = p - lr*g/sqrt(s' + eps)``. A zero
    denominator (possible only with ``eps == 0``) yields no update.
    """
    rho = DTYPE(state.rho)
    lr = DTYPE(state.learning_rate)
    eps = DTYPE(state.epsilon)

    new_params: dict[str, np.ndarray] = {}
    new_acc: dict[str, np.ndarray] = {}
    for name, param in params.items():
        if name not in grads or name not in state.accumulators:
            raise KeyError(f"missing gradient or accumulator for parameter '{name}'")
        grad = np.asarray(grads[name], dtype=DTYPE)
        acc = state.accumulators[name]
        if grad.shape != param.shape or acc.shape != param.shape:
            raise ShapeError(
                f"'{name}': param {param.shape}, grad {grad.shape}, accumulator {acc.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")

        s = rho * acc + (DTYPE(1) - rho) * grad * grad
        denom = np.sqrt(s + eps)
        step = np.divide(lr * grad, denom, out=np.zeros_like(grad), where=denom > 0)
        new_acc[name] = s
        new_params[name] = param - step

    return new_params, replace(state, accumulators=new_acc)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    total = sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())
    return float(np.sqrt(total))


def clip_by_global_norm(
    grads: Mapping[str, np.ndarray], max_norm: Optional[float] = DEFAULT_CLIP_NORM
) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``.

    Returns the (possibly rescaled) gradients and the norm before clipping.
    ``max_norm=None`` disables clipping.
    """
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return dict(grads), norm
    scale = DTYPE(max_norm / norm)
    return {name: (g * scale).astype(DTYPE) for name, g in grads.items()}, norm

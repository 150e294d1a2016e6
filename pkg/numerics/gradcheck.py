"""Central finite differences, used as an oracle for tape gradients."""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping

import numpy as np

from numerics.tensor import (
    DTYPE,
    ArrayLike,
    Computation,
    NonFiniteError,
    as_tensor,
    forward_backward,
)

DEFAULT_STEP = 1e-3


def finite_difference_gradient(
    func: Callable[[np.ndarray], float], point: np.ndarray, h: float = DEFAULT_STEP
) -> np.ndarray:
    """Estimate the gradient of a scalar function by central differences.

    Each coordinate is perturbed by +/- ``h`` in the point's own dtype and the
    difference quotient divides by the step actually represented, so float32
    points are not penalised by rounding of ``x +/- h``.
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    x = np.array(point, dtype=np.result_type(np.asarray(point).dtype, np.float32), copy=True)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + x.dtype.type(h)
        upper = flat[i]
        f_plus = float(func(x))
        flat[i] = original - x.dtype.type(h)
        lower = flat[i]
        f_minus = float(func(x))
        flat[i] = original
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NonFiniteError(f"function is not finite around coordinate {i}")
        grad.reshape(-1)[i] = (f_plus - f_minus) / (float(upper) - float(lower))
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / (|a| + |b|)`` in the L2 norm; 0 when both are zero."""
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a64) + np.linalg.norm(b64)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a64 - b64) / denom)


def check_gradients(
    computation: Computation,
    inputs: Mapping[str, ArrayLike],
    params: Mapping[str, ArrayLike],
    h: float = DEFAULT_STEP,
) -> dict[str, float]:
    """Compare tape gradients with finite differences for every parameter.

    Returns the relative error per parameter name.
    """
    base = {name: as_tensor(v).data.astype(DTYPE) for name, v in params.items()}
    _, tape_grads = forward_backward(computation, inputs, base)
    input_tensors = {name: as_tensor(v) for name, v in inputs.items()}

    errors: dict[str, float] = {}
    for name in base:

        def scalar(values: np.ndarray, name: str = name) -> float:
            trial = {key: as_tensor(v) for key, v in base.items()}
            trial[name] = as_tensor(values)
            return computation(input_tensors, trial).item()

        numeric = finite_difference_gradient(scalar, base[name], h)
        errors[name] = relative_error(tape_grads[name], numeric)
    return errors

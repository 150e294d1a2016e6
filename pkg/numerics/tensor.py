"""Dense float32 tensors with tape-based reverse-mode differentiation.

Every primitive computes its value with numpy and, when a ``GradientTape`` is
recording and one of its inputs is watched, appends a node holding a backward
closure. ``GradientTape.gradient`` replays the nodes in reverse creation order,
which is a valid topological order because a node can only consume tensors
that already exist.

Supported primitives are the ones the ConvLSTM model and its losses need:
elementwise arithmetic (numpy broadcasting), matmul, 1-D valid convolution over
time, a fused LSTM step, activations, softmax, reductions, cosine distance and
fused softmax cross-entropy.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

DTYPE = np.float32

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
Grads = tuple[Optional[np.ndarray], ...]
BackwardFn = Callable[[Grads, tuple[bool, ...]], Grads]


class ShapeError(ValueError):
    """Raised when composed primitives disagree on shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""


def _check_finite(values: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"Non-finite value produced by {where}")


class Tensor:
    """Row-major float32 array that primitives can differentiate through."""

    __slots__ = ("data", "name", "__weakref__")

    def __init__(self, data: ArrayLike, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=DTYPE)
        _check_finite(array, name or "tensor input")
        self.data = array
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other: ArrayLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return mul(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> Tensor:
        return matmul(self, other)


# ============================================================================
# Gradient tape
# ============================================================================


@dataclass(frozen=True)
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    outputs: tuple[Tensor, ...]
    backward: BackwardFn


_local = threading.local()


def _tape_stack() -> list[GradientTape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


class GradientTape:
    """Records primitives applied to watched tensors; single use.

    Example:
        >>> w = Tensor([1.0, 2.0])
        >>> with GradientTape() as tape:
        ...     tape.watch(w)
        ...     y = reduce_sum(w * Tensor([3.0, 4.0]))
        >>> tape.gradient(y, [w])[0].tolist()
        [3.0, 4.0]
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._tracked: dict[int, Tensor] = {}
        self._used = False

    def __enter__(self) -> GradientTape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        elif self in stack:
            stack.remove(self)

    def watch(self, *tensors: Tensor) -> None:
        for tensor in tensors:
            self._tracked[id(tensor)] = tensor

    def is_tracked(self, tensor: Tensor) -> bool:
        return id(tensor) in self._tracked

    def _record(self, node: _Node) -> None:
        self._nodes.append(node)
        for out in node.outputs:
            self._tracked[id(out)] = out

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Return d(target)/d(source) for each source; unreachable sources get zeros."""
        if self._used:
            raise RuntimeError("GradientTape is single-use; record a new one")
        self._used = True
        if target.size != 1:
            raise ShapeError(f"gradient target must be a scalar, got shape {target.shape}")

        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for node in reversed(self._nodes):
            out_grads = tuple(grads.get(id(out)) for out in node.outputs)
            if all(g is None for g in out_grads):
                continue
            needs = tuple(id(t) in self._tracked for t in node.inputs)
            in_grads = node.backward(out_grads, needs)
            for tensor, grad, needed in zip(node.inputs, in_grads, needs):
                if grad is None or not needed:
                    continue
                if grad.shape != tensor.shape:
                    raise ShapeError(
                        f"{node.op} produced gradient of shape {grad.shape} "
                        f"for an input of shape {tensor.shape}"
                    )
                _check_finite(grad, f"gradient of {node.op}")
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad

        return [
            grads[id(source)].astype(DTYPE, copy=False)
            if id(source) in grads
            else np.zeros_like(source.data)
            for source in sources
        ]


def _emit(
    op: str, inputs: tuple[Tensor, ...], values: tuple[np.ndarray, ...], backward: BackwardFn
) -> tuple[Tensor, ...]:
    outputs = tuple(Tensor(v, name=op) for v in values)
    for tape in _tape_stack():
        if any(tape.is_tracked(t) for t in inputs):
            tape._record(_Node(op, inputs, outputs, backward))
    return outputs


def _emit_one(
    op: str,
    inputs: tuple[Tensor, ...],
    value: np.ndarray,
    backward: Callable[[np.ndarray, tuple[bool, ...]], Grads],
) -> Tensor:
    def _backward(out_grads: Grads, needs: tuple[bool, ...]) -> Grads:
        (grad,) = out_grads
        assert grad is not None
        return backward(grad, needs)

    return _emit(op, inputs, (value,), _backward)[0]


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from e


# ============================================================================
# Elementwise primitives
# ============================================================================


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _emit_one(
        "add",
        (a, b),
        a.data + b.data,
        lambda g, needs: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _emit_one(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g, needs: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _emit_one(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g, needs: (
            _unbroadcast(g * b.data, a.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.shape) if needs[1] else None,
        ),
    )


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _emit_one("neg", (a,), -a.data, lambda g, needs: (-g,))


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _emit_one(
        "relu", (a,), np.maximum(a.data, 0), lambda g, needs: (g * (a.data > 0),)
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _emit_one("sigmoid", (a,), s, lambda g, needs: (g * s * (1 - s),))


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _emit_one("tanh", (a,), t, lambda g, needs: (g * (1 - t * t),))


def absolute(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _emit_one("abs", (a,), np.abs(a.data), lambda g, needs: (g * np.sign(a.data),))


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _emit_one("square", (a,), a.data * a.data, lambda g, needs: (2 * a.data * g,))


def log1p(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= -1):
        raise NonFiniteError("log1p: input must be greater than -1")
    return _emit_one("log1p", (a,), np.log1p(a.data), lambda g, needs: (g / (1 + a.data),))


def clamp_min(a: ArrayLike, floor: float) -> Tensor:
    a = as_tensor(a)
    return _emit_one(
        "clamp_min",
        (a,),
        np.maximum(a.data, DTYPE(floor)),
        lambda g, needs: (g * (a.data > floor),),
    )


# ============================================================================
# Shape and reduction primitives
# ============================================================================


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    order = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(order))
    return _emit_one(
        "transpose",
        (a,),
        np.ascontiguousarray(a.data.transpose(order)),
        lambda g, needs: (g.transpose(inverse),),
    )


def unstack(a: ArrayLike, axis: int) -> list[Tensor]:
    """Split ``a`` along ``axis`` into slices, as one multi-output node."""
    a = as_tensor(a)
    pieces = tuple(np.ascontiguousarray(p) for p in np.moveaxis(a.data, axis, 0))

    def backward(out_grads: Grads, needs: tuple[bool, ...]) -> Grads:
        filled = [
            g if g is not None else np.zeros_like(p) for g, p in zip(out_grads, pieces)
        ]
        return (np.stack(filled, axis=axis),)

    return list(_emit("unstack", (a,), pieces, backward))


def reduce_sum(a: ArrayLike, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    value = np.sum(a.data, axis=axis, dtype=np.float64).astype(DTYPE)

    def backward(g: np.ndarray, needs: tuple[bool, ...]) -> Grads:
        expanded = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, a.shape).astype(DTYPE),)

    return _emit_one("sum", (a,), value, backward)


def reduce_mean(a: ArrayLike, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("mean over an empty axis")
    value = np.mean(a.data, axis=axis, dtype=np.float64).astype(DTYPE)

    def backward(g: np.ndarray, needs: tuple[bool, ...]) -> Grads:
        expanded = g if axis is None else np.expand_dims(g, axis)
        return ((np.broadcast_to(expanded, a.shape) / DTYPE(count)).astype(DTYPE),)

    return _emit_one("mean", (a,), value, backward)


# ============================================================================
# Linear algebra and network primitives
# ============================================================================


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _emit_one(
        "matmul",
        (a, b),
        a.data @ b.data,
        lambda g, needs: (
            g @ b.data.T if needs[0] else None,
            a.data.T @ g if needs[1] else None,
        ),
    )


def conv1d(x: ArrayLike, kernel: ArrayLike, bias: ArrayLike) -> Tensor:
    """Valid, stride-1 convolution over time.

    Shapes: x [N, C, T], kernel [F, C, K], bias [F] -> [N, F, T - K + 1].
    Kernels span all input channels.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim != 3 or kernel.ndim != 3 or bias.ndim != 1:
        raise ShapeError(f"conv1d: bad ranks x{x.shape} kernel{kernel.shape} bias{bias.shape}")
    n, channels, steps = x.shape
    filters, kernel_channels, width = kernel.shape
    if kernel_channels != channels:
        raise ShapeError(f"conv1d: input has {channels} channels, kernel expects {kernel_channels}")
    if bias.shape[0] != filters:
        raise ShapeError(f"conv1d: bias has {bias.shape[0]} entries for {filters} filters")
    if steps < width:
        raise ShapeError(f"conv1d: {steps} time steps is shorter than kernel width {width}")

    out_steps = steps - width + 1
    patches = np.lib.stride_tricks.sliding_window_view(x.data, width, axis=2)  # [N, C, T', K]
    value = np.tensordot(patches, kernel.data, axes=([1, 3], [1, 2]))  # [N, T', F]
    value = value.transpose(0, 2, 1) + bias.data[None, :, None]

    def backward(g: np.ndarray, needs: tuple[bool, ...]) -> Grads:
        dx = None
        if needs[0]:
            dx = np.zeros_like(x.data)
            for k in range(width):
                # [C, N, T'] -> [N, C, T']
                contrib = np.tensordot(kernel.data[:, :, k], g, axes=([0], [1]))
                dx[:, :, k : k + out_steps] += contrib.transpose(1, 0, 2)
        dk = np.tensordot(g, patches, axes=([0, 2], [0, 2])) if needs[1] else None
        db = g.sum(axis=(0, 2)) if needs[2] else None
        return dx, dk, db

    return _emit_one("conv1d", (x, kernel, bias), np.ascontiguousarray(value), backward)


def lstm_step(
    x: ArrayLike,
    h: ArrayLike,
    c: ArrayLike,
    w_ih: ArrayLike,
    w_hh: ArrayLike,
    bias: ArrayLike,
) -> tuple[Tensor, Tensor]:
    """One LSTM time step with gate rows ordered input, forget, cell, output.

    Shapes: x [N, I], h and c [N, H], w_ih [4H, I], w_hh [4H, H], bias [4H].
    Returns the next (h, c).
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    w_ih, w_hh, bias = as_tensor(w_ih), as_tensor(w_hh), as_tensor(bias)
    hidden = h.shape[1]
    if w_ih.shape != (4 * hidden, x.shape[1]) or w_hh.shape != (4 * hidden, hidden):
        raise ShapeError(
            f"lstm_step: weights {w_ih.shape}/{w_hh.shape} do not fit input {x.shape} "
            f"and hidden size {hidden}"
        )
    if bias.shape != (4 * hidden,) or c.shape != h.shape or x.shape[0] != h.shape[0]:
        raise ShapeError("lstm_step: bias or state shapes are inconsistent")

    z = x.data @ w_ih.data.T + h.data @ w_hh.data.T + bias.data
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden : 2 * hidden])
    g_cell = np.tanh(z[:, 2 * hidden : 3 * hidden])
    o = _sigmoid(z[:, 3 * hidden :])
    c_next = f * c.data + i * g_cell
    tanh_c = np.tanh(c_next)
    h_next = o * tanh_c

    def backward(out_grads: Grads, needs: tuple[bool, ...]) -> Grads:
        dh_next, dc_next = out_grads
        dh_next = dh_next if dh_next is not None else np.zeros_like(h_next)
        dc_next = dc_next if dc_next is not None else np.zeros_like(c_next)
        dc_total = dc_next + dh_next * o * (1 - tanh_c * tanh_c)
        dz = np.concatenate(
            [
                dc_total * g_cell * i * (1 - i),
                dc_total * c.data * f * (1 - f),
                dc_total * i * (1 - g_cell * g_cell),
                dh_next * tanh_c * o * (1 - o),
            ],
            axis=1,
        )
        return (
            dz @ w_ih.data if needs[0] else None,
            dz @ w_hh.data if needs[1] else None,
            dc_total * f if needs[2] else None,
            dz.T @ x.data if needs[3] else None,
            dz.T @ h.data if needs[4] else None,
            dz.sum(axis=0) if needs[5] else None,
        )

    h_out, c_out = _emit("lstm_step", (x, h, c, w_ih, w_hh, bias), (h_next, c_next), backward)
    return h_out, c_out


def softmax(logits: ArrayLike) -> Tensor:
    """Row-wise softmax over the last axis."""
    logits = as_tensor(logits)
    s = softmax_array(logits.data).astype(DTYPE)

    def backward(g: np.ndarray, needs: tuple[bool, ...]) -> Grads:
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return _emit_one("softmax", (logits,), s, backward)


def softmax_array(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis, in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: ArrayLike, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross-entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError("cross-entropy: label index out of range")
    n = logits.shape[0]
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(log_norm - z[rows, labels])

    def backward(g: np.ndarray, needs: tuple[bool, ...]) -> Grads:
        probs = np.exp(z - log_norm[:, None])
        probs[rows, labels] -= 1.0
        return ((probs * (float(g) / n)).astype(DTYPE),)

    return _emit_one("softmax_cross_entropy", (logits,), np.asarray(loss, dtype=DTYPE), backward)


def cosine_distance(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Row-wise ``1 - cos(a_i, b_i)``; a pair containing a zero vector scores 1."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"cosine_distance: shapes {a.shape} and {b.shape} differ")
    a64, b64 = a.data.astype(np.float64), b.data.astype(np.float64)
    dot = np.sum(a64 * b64, axis=1)
    aa = np.sum(a64 * a64, axis=1)
    bb = np.sum(b64 * b64, axis=1)
    valid = (aa > 0) & (bb > 0)
    denom = np.sqrt(np.where(valid, aa * bb, 1.0))
    cos = np.where(valid, np.minimum(dot / denom, 1.0), 0.0)
    value = (1.0 - cos).astype(DTYPE)

    def backward(g: np.ndarray, needs: tuple[bool, ...]) -> Grads:
        scale = np.where(valid, g.astype(np.float64) / denom, 0.0)[:, None]
        safe_aa = np.where(valid, aa, 1.0)[:, None]
        safe_bb = np.where(valid, bb, 1.0)[:, None]
        da = -scale * (b64 - (dot[:, None] / safe_aa) * a64)
        db = -scale * (a64 - (dot[:, None] / safe_bb) * b64)
        return da.astype(DTYPE), db.astype(DTYPE)

    return _emit_one("cosine_distance", (a, b), value, backward)


# ============================================================================
# Whole-computation differentiation
# ============================================================================


Computation = Callable[[Mapping[str, Tensor], Mapping[str, Tensor]], Tensor]


def forward_backward(
    computation: Computation,
    inputs: Mapping[str, ArrayLike],
    params: Mapping[str, ArrayLike],
) -> tuple[Tensor, dict[str, np.ndarray]]:
    """Run ``computation(inputs, params)`` under a tape and differentiate it.

    The computation must return a scalar tensor. Gradients are returned per
    parameter name, with the parameter's shape; parameters the output does not
    depend on get zeros.
    """
    input_tensors = {name: as_tensor(v) for name, v in inputs.items()}
    param_tensors = {name: as_tensor(v) for name, v in params.items()}
    with GradientTape() as tape:
        tape.watch(*param_tensors.values())
        output = computation(input_tensors, param_tensors)
    grads = tape.gradient(output, list(param_tensors.values()))
    return output, dict(zip(param_tensors.keys(), grads))

"""DeepConvLSTM split into an embedding extractor and a softmax classifier head.

The embedder runs four valid convolutions over time (ReLU after each) and two
stacked LSTM layers over the shortened time axis; the embedding is the last
hidden state of the second LSTM layer. The classifier is a single dense layer
followed by softmax.

Parameters are stored as read-only float32 arrays, addressed by stable names
(``embedder.conv0.kernel``, ``embedder.lstm1.w_hh``, ``classifier.weight``...).
The same names key the gradient and optimizer dictionaries during training.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

import numpy as np
from loguru import logger

from numerics.tensor import (
    DTYPE,
    ArrayLike,
    ShapeError,
    Tensor,
    add,
    conv1d,
    lstm_step,
    matmul,
    mul,
    relu,
    softmax_array,
    transpose,
    unstack,
)

CONV_LAYERS = 4
LSTM_LAYERS = 2
CONV_FILTERS = 64
KERNEL_SIZE = 5
HIDDEN_SIZE = 128
WINDOW_LENGTH = 100
DROPOUT_RATE = 0.5
FORGET_GATE_BIAS = 1.0
EMBED_BATCH_SIZE = 256

EMBEDDER_PREFIX = "embedder."
CLASSIFIER_PREFIX = "classifier."


class Domain(str, Enum):
    """Which body site a model was built for."""

    SOURCE = "source"
    TARGET = "target"


# ============================================================================
# Parameter containers
# ============================================================================


def _frozen(values: ArrayLike) -> np.ndarray:
    array = np.array(values, dtype=DTYPE, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class ModelMeta:
    """Shape-determining facts about a model.

    ``conv_filters``, ``kernel_size`` and ``hidden_size`` default to the
    reference architecture (64 feature maps, kernel 5, 128 LSTM cells).
    """

    in_channels: int
    num_classes: int
    window_length: int = WINDOW_LENGTH
    domain: Domain = Domain.SOURCE
    conv_filters: int = CONV_FILTERS
    kernel_size: int = KERNEL_SIZE
    hidden_size: int = HIDDEN_SIZE

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain", Domain(self.domain))
        for name in ("in_channels", "num_classes", "window_length", "conv_filters", "hidden_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kernel_size < 1:
            raise ValueError(f"kernel_size must be positive, got {self.kernel_size}")
        if self.lstm_steps < 1:
            raise ValueError(
                f"window of {self.window_length} samples is too short for "
                f"{CONV_LAYERS} convolutions of width {self.kernel_size}"
            )

    @property
    def lstm_steps(self) -> int:
        """Time steps left after the valid convolutions."""
        return self.window_length - CONV_LAYERS * (self.kernel_size - 1)

    @property
    def embedding_dim(self) -> int:
        return self.hidden_size

    def validate_reference_architecture(self) -> None:
        """Raise unless the widths are exactly 4x64 conv maps and 2x128 LSTM cells."""
        expected = (CONV_FILTERS, KERNEL_SIZE, HIDDEN_SIZE)
        actual = (self.conv_filters, self.kernel_size, self.hidden_size)
        if actual != expected:
            raise ValueError(
                f"architecture (filters, kernel, hidden)={actual} differs from "
                f"the reference {expected}"
            )

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["domain"] = self.domain.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelMeta:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model meta fields: {sorted(unknown)}")
        return cls(**data)


def parameter_shapes(meta: ModelMeta) -> dict[str, tuple[int, ...]]:
    """Every parameter name with its shape, in checkpoint order."""
    f, k, h = meta.conv_filters, meta.kernel_size, meta.hidden_size
    shapes: dict[str, tuple[int, ...]] = {}
    channels = meta.in_channels
    for i in range(CONV_LAYERS):
        shapes[f"embedder.conv{i}.kernel"] = (f, channels, k)
        shapes[f"embedder.conv{i}.bias"] = (f,)
        channels = f
    inputs = f
    for i in range(LSTM_LAYERS):
        shapes[f"embedder.lstm{i}.w_ih"] = (4 * h, inputs)
        shapes[f"embedder.lstm{i}.w_hh"] = (4 * h, h)
        shapes[f"embedder.lstm{i}.bias"] = (4 * h,)
        inputs = h
    shapes["classifier.weight"] = (meta.num_classes, h)
    shapes["classifier.bias"] = (meta.num_classes,)
    return shapes


def embedder_names(meta: ModelMeta) -> list[str]:
    return [name for name in parameter_shapes(meta) if name.startswith(EMBEDDER_PREFIX)]


def classifier_names(meta: ModelMeta) -> list[str]:
    return [name for name in parameter_shapes(meta) if name.startswith(CLASSIFIER_PREFIX)]


def embedder_kernel_names(meta: ModelMeta) -> list[str]:
    """Weight matrices and kernels of the embedder (biases excluded)."""
    return [
        name
        for name in embedder_names(meta)
        if name.endswith((".kernel", ".w_ih", ".w_hh"))
    ]


@dataclass(frozen=True)
class ConvLayer:
    kernel: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class LstmLayer:
    """Gate rows are stacked input, forget, cell, output."""

    w_ih: np.ndarray
    w_hh: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class EmbedderParams:
    conv: tuple[ConvLayer, ...]
    lstm: tuple[LstmLayer, ...]

    def __post_init__(self) -> None:
        if len(self.conv) != CONV_LAYERS or len(self.lstm) != LSTM_LAYERS:
            raise ShapeError(
                f"embedder needs {CONV_LAYERS} conv and {LSTM_LAYERS} LSTM layers, "
                f"got {len(self.conv)} and {len(self.lstm)}"
            )


@dataclass(frozen=True)
class ClassifierParams:
    weight: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class ModelParams:
    """Immutable embedder + classifier parameters with the meta they satisfy."""

    embedder: EmbedderParams
    classifier: ClassifierParams
    meta: ModelMeta

    def __post_init__(self) -> None:
        arrays = self.arrays()
        for name, shape in parameter_shapes(self.meta).items():
            if arrays[name].shape != shape:
                raise ShapeError(
                    f"{name} has shape {arrays[name].shape}, meta requires {shape}"
                )

    def arrays(self) -> dict[str, np.ndarray]:
        """All parameters by name, in checkpoint order."""
        out: dict[str, np.ndarray] = {}
        for i, conv in enumerate(self.embedder.conv):
            out[f"embedder.conv{i}.kernel"] = conv.kernel
            out[f"embedder.conv{i}.bias"] = conv.bias
        for i, lstm in enumerate(self.embedder.lstm):
            out[f"embedder.lstm{i}.w_ih"] = lstm.w_ih
            out[f"embedder.lstm{i}.w_hh"] = lstm.w_hh
            out[f"embedder.lstm{i}.bias"] = lstm.bias
        out["classifier.weight"] = self.classifier.weight
        out["classifier.bias"] = self.classifier.bias
        return out

    @classmethod
    def from_arrays(cls, meta: ModelMeta, arrays: Mapping[str, ArrayLike]) -> ModelParams:
        missing = [name for name in parameter_shapes(meta) if name not in arrays]
        if missing:
            raise KeyError(f"missing parameters: {missing}")
        conv = tuple(
            ConvLayer(
                _frozen(arrays[f"embedder.conv{i}.kernel"]),
                _frozen(arrays[f"embedder.conv{i}.bias"]),
            )
            for i in range(CONV_LAYERS)
        )
        lstm = tuple(
            LstmLayer(
                _frozen(arrays[f"embedder.lstm{i}.w_ih"]),
                _frozen(arrays[f"embedder.lstm{i}.w_hh"]),
                _frozen(arrays[f"embedder.lstm{i}.bias"]),
            )
            for i in range(LSTM_LAYERS)
        )
        classifier = ClassifierParams(
            _frozen(arrays["classifier.weight"]), _frozen(arrays["classifier.bias"])
        )
        return cls(EmbedderParams(conv, lstm), classifier, meta)

    def with_arrays(self, updates: Mapping[str, ArrayLike]) -> ModelParams:
        """Copy of this model with the named parameters replaced."""
        unknown = set(updates) - set(parameter_shapes(self.meta))
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        merged: dict[str, ArrayLike] = {**self.arrays(), **updates}
        return ModelParams.from_arrays(self.meta, merged)


# ============================================================================
# Initialization
# ============================================================================


def _init_array(
    name: str, shape: tuple[int, ...], meta: ModelMeta, rng: np.random.Generator
) -> np.ndarray:
    h = meta.hidden_size
    if ".lstm" in name:
        if name.endswith(".bias"):
            bias = np.zeros(shape, dtype=DTYPE)
            bias[h : 2 * h] = FORGET_GATE_BIAS
            return bias
        bound = np.sqrt(1.0 / h)
    elif ".conv" in name:
        bound = np.sqrt(1.0 / _conv_fan_in(name, meta))
    else:
        bound = np.sqrt(1.0 / h)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


def _conv_fan_in(name: str, meta: ModelMeta) -> int:
    layer = int(name.split(".")[1].removeprefix("conv"))
    channels = meta.in_channels if layer == 0 else meta.conv_filters
    return channels * meta.kernel_size


def init_model(meta: ModelMeta, seed: int) -> ModelParams:
    """Uniform(+/- sqrt(1/fan_in)) conv and dense layers; LSTM weights
    uniform(+/- sqrt(1/hidden)), LSTM biases zero except the forget gate at 1."""
    rng = np.random.default_rng(seed)
    arrays = {
        name: _init_array(name, shape, meta, rng)
        for name, shape in parameter_shapes(meta).items()
    }
    logger.debug(
        f"Initialized {meta.domain.value} model: {meta.in_channels} channels, "
        f"{meta.num_classes} classes, seed {seed}"
    )
    return ModelParams.from_arrays(meta, arrays)


def init_target_from_source(
    source: ModelParams, target_channels: int, seed: int
) -> ModelParams:
    """Target model initialized from the source one.

    Every layer is copied; when the target site has a different channel count
    only the first convolution is freshly initialized. The classifier head is
    the source head.
    """
    meta = dataclasses.replace(
        source.meta, in_channels=target_channels, domain=Domain.TARGET
    )
    arrays = dict(source.arrays())
    if target_channels != source.meta.in_channels:
        rng = np.random.default_rng(seed)
        for name in ("embedder.conv0.kernel", "embedder.conv0.bias"):
            arrays[name] = _init_array(name, parameter_shapes(meta)[name], meta, rng)
        logger.debug(
            f"Re-initialized first convolution for {target_channels} target channels "
            f"(source has {source.meta.in_channels})"
        )
    return ModelParams.from_arrays(meta, arrays)


def random_target_model(source: ModelParams, target_channels: int, seed: int) -> ModelParams:
    """Randomly initialized target embedder carrying the source classifier."""
    meta = dataclasses.replace(
        source.meta, in_channels=target_channels, domain=Domain.TARGET
    )
    return transplant_classifier(source, init_model(meta, seed))


def transplant_classifier(source: ModelParams, target: ModelParams) -> ModelParams:
    """Target embedder with a bitwise copy of the source classifier head."""
    if source.meta.num_classes != target.meta.num_classes:
        raise ShapeError(
            f"class counts differ: source {source.meta.num_classes}, "
            f"target {target.meta.num_classes}"
        )
    if source.meta.embedding_dim != target.meta.embedding_dim:
        raise ShapeError(
            f"embedding sizes differ: source {source.meta.embedding_dim}, "
            f"target {target.meta.embedding_dim}"
        )
    return dataclasses.replace(target, classifier=source.classifier)


# ============================================================================
# Forward pass
# ============================================================================


def check_window_batch(meta: ModelMeta, windows: ArrayLike) -> np.ndarray:
    """Return ``windows`` as float32 [N, C, T], raising if C or T mismatch ``meta``."""
    array = np.asarray(windows.data if isinstance(windows, Tensor) else windows, dtype=DTYPE)
    if array.ndim != 3:
        raise ShapeError(f"expected windows shaped [N, C, T], got {array.shape}")
    _, channels, length = array.shape
    if channels != meta.in_channels or length != meta.window_length:
        raise ShapeError(
            f"model expects {meta.in_channels}x{meta.window_length} windows, "
            f"got {channels}x{length}"
        )
    return array


def embed_tensor(params: Mapping[str, Tensor], windows: Tensor, meta: ModelMeta) -> Tensor:
    """Differentiable embedder: [N, C, T] windows to [N, hidden] embeddings."""
    x = windows
    for i in range(CONV_LAYERS):
        x = relu(conv1d(x, params[f"embedder.conv{i}.kernel"], params[f"embedder.conv{i}.bias"]))

    batch = x.shape[0]
    sequence = unstack(x, axis=2)
    for i in range(LSTM_LAYERS):
        h = Tensor(np.zeros((batch, meta.hidden_size), dtype=DTYPE))
        c = Tensor(np.zeros((batch, meta.hidden_size), dtype=DTYPE))
        outputs = []
        for x_t in sequence:
            h, c = lstm_step(
                x_t,
                h,
                c,
                params[f"embedder.lstm{i}.w_ih"],
                params[f"embedder.lstm{i}.w_hh"],
                params[f"embedder.lstm{i}.bias"],
            )
            outputs.append(h)
        sequence = outputs
    return sequence[-1]


def logits_tensor(
    params: Mapping[str, Tensor], embeddings: Tensor, dropout_mask: Optional[np.ndarray] = None
) -> Tensor:
    """Dense head on top of ``embeddings``; ``dropout_mask`` is applied first if given."""
    if dropout_mask is not None:
        embeddings = mul(embeddings, dropout_mask)
    return add(
        matmul(embeddings, transpose(params["classifier.weight"])), params["classifier.bias"]
    )


def dropout_mask(
    rng: np.random.Generator, shape: tuple[int, ...], rate: float = DROPOUT_RATE
) -> np.ndarray:
    """Inverted-dropout mask: kept units are scaled by 1/(1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return (keep / (1.0 - rate)).astype(DTYPE)


def tensors_of(model: ModelParams, names: Optional[Iterable[str]] = None) -> dict[str, Tensor]:
    arrays = model.arrays()
    selected = arrays if names is None else {name: arrays[name] for name in names}
    return {name: Tensor(value, name=name) for name, value in selected.items()}


def embed_batch(
    model: ModelParams, windows: ArrayLike, batch_size: int = EMBED_BATCH_SIZE
) -> np.ndarray:
    """Embeddings [N, hidden] for windows [N, C, T], computed in chunks."""
    array = check_window_batch(model.meta, windows)
    params = tensors_of(model, embedder_names(model.meta))
    chunks = [
        embed_tensor(params, Tensor(array[start : start + batch_size]), model.meta).data
        for start in range(0, len(array), batch_size)
    ]
    if not chunks:
        return np.zeros((0, model.meta.embedding_dim), dtype=DTYPE)
    return np.concatenate(chunks, axis=0)


def head_probabilities(model: ModelParams, embeddings: np.ndarray) -> np.ndarray:
    """softmax(W e + b) per row of ``embeddings``."""
    embeddings = np.asarray(embeddings, dtype=DTYPE)
    if embeddings.ndim != 2 or embeddings.shape[1] != model.meta.embedding_dim:
        raise ShapeError(
            f"expected embeddings shaped [N, {model.meta.embedding_dim}], got {embeddings.shape}"
        )
    logits = embeddings @ model.classifier.weight.T + model.classifier.bias
    return softmax_array(logits)


def classify_batch(
    model: ModelParams, windows: ArrayLike, batch_size: int = EMBED_BATCH_SIZE
) -> np.ndarray:
    """Class probabilities [N, K] for windows [N, C, T]."""
    return head_probabilities(model, embed_batch(model, windows, batch_size))


def embed(model: ModelParams, window: ArrayLike) -> np.ndarray:
    """Embedding of a single [C, T] window."""
    return embed_batch(model, np.asarray(window, dtype=DTYPE)[None])[0]


def classify(model: ModelParams, window: ArrayLike) -> np.ndarray:
    """Class probability vector of a single [C, T] window."""
    return classify_batch(model, np.asarray(window, dtype=DTYPE)[None])[0]


def predict(model: ModelParams, windows: ArrayLike) -> np.ndarray:
    return np.argmax(classify_batch(model, windows), axis=1)

"""Binary checkpoint files for ModelParams.

Layout (all integers little-endian):

    8 bytes   magic ``IMUTCKPT``
    uint16    format version (1)
    uint32    length L of the header block
    L bytes   UTF-8 JSON header: {"meta": {...}, "tensors": [{"name", "shape"}, ...]}
    payload   every tensor as little-endian float32, row-major, in header order

The tensor order is the one returned by ``parameter_shapes``. A file whose
payload is shorter or longer than the header announces is rejected, and so
is one holding a NaN or infinite value.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Union

import numpy as np
from loguru import logger

from model.convlstm import ModelMeta, ModelParams, parameter_shapes

MAGIC = b"IMUTCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sHI")
_FLOAT = np.dtype("<f4")


class CheckpointError(ValueError):
    """Raised for files that are not valid checkpoints of this format."""


def save_checkpoint(model: ModelParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    arrays = model.arrays()
    header = {
        "meta": model.meta.to_dict(),
        "tensors": [{"name": name, "shape": list(a.shape)} for name, a in arrays.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for array in arrays.values():
            f.write(np.ascontiguousarray(array, dtype=_FLOAT).tobytes())
    logger.debug(f"Saved checkpoint to {path}")
    return path


def _read_header(blob: bytes, path: Path) -> tuple[dict[str, Any], int]:
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    end = _PREFIX.size + header_len
    if len(blob) < end:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[_PREFIX.size : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e
    return header, end


def read_checkpoint_meta(path: Union[str, Path]) -> ModelMeta:
    """Meta block of a checkpoint, without loading the payload."""
    path = Path(path)
    header, _ = _read_header(path.read_bytes(), path)
    try:
        return ModelMeta.from_dict(header["meta"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: invalid meta block: {e}") from e


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """Read a checkpoint; any inconsistency raises CheckpointError."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    header, offset = _read_header(blob, path)

    try:
        meta = ModelMeta.from_dict(header["meta"])
        listed = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: invalid meta block: {e}") from e

    expected = list(parameter_shapes(meta).items())
    if listed != expected:
        raise CheckpointError(f"{path}: tensor table does not match the model meta")

    total = sum(int(np.prod(shape)) for _, shape in expected) * _FLOAT.itemsize
    if len(blob) - offset != total:
        raise CheckpointError(
            f"{path}: payload has {len(blob) - offset} bytes, expected {total}"
        )

    arrays: dict[str, np.ndarray] = {}
    for name, shape in expected:
        count = int(np.prod(shape))
        values = np.frombuffer(blob, dtype=_FLOAT, count=count, offset=offset)
        if not np.all(np.isfinite(values)):
            raise CheckpointError(f"{path}: tensor {name} holds NaN or infinite values")
        arrays[name] = values.reshape(shape).astype(np.float32)
        offset += count * _FLOAT.itemsize
    logger.debug(f"Loaded {meta.domain.value} checkpoint from {path}")
    return ModelParams.from_arrays(meta, arrays)

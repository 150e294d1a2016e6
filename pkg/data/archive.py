"""Window archive: the harmonized, windowed dataset in one binary file.

Layout (little-endian):

    header    struct "<8sHHHHHI": magic ``IMUTWARC``, version (1), K classes,
              source channels, target channels, window length, window count N
    uint32    length L of the JSON block
    L bytes   UTF-8 JSON: dataset_id, class_names, source_site, target_site,
              subjects (one per window), seed, has_partition
    payload   source windows  float32 [N, Cs, T]
              target windows  float32 [N, Ct, T]
              labels          uint8   [N]
              pair ids        int64   [N]
              start times     float64 [N]
              partition codes uint8   [N]   (only when has_partition)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from loguru import logger

from data.descriptor import resolve_data_path
from data.windows import PairedWindows, WindowedSplit, split_from_codes, standardize_pairs

MAGIC = b"IMUTWARC"
FORMAT_VERSION = 1
MAX_CLASSES = 255
_HEADER = struct.Struct("<8sHHHHHI")
_LENGTH = struct.Struct("<I")


class ArchiveError(ValueError):
    """Raised for files that are not valid window archives."""


@dataclass(frozen=True)
class WindowArchive:
    dataset_id: str
    windows: PairedWindows
    partition: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def split(self) -> WindowedSplit:
        """The partition stored at ingest time."""
        if self.partition is None:
            raise ArchiveError("archive carries no stored partition")
        return split_from_codes(self.windows, self.partition, self.seed)


def write_archive(archive: WindowArchive, path: Union[str, Path]) -> Path:
    path = Path(path)
    w = archive.windows
    n = len(w)
    if w.num_classes > MAX_CLASSES:
        raise ArchiveError(f"at most {MAX_CLASSES} classes fit a label byte, got {w.num_classes}")
    if archive.partition is not None and len(archive.partition) != n:
        raise ArchiveError("partition codes must cover every window")
    length = w.window_length if n else 0
    source_channels = w.source.shape[1] if n else 0
    target_channels = w.target.shape[1] if n else 0

    meta = {
        "dataset_id": archive.dataset_id,
        "class_names": list(w.class_names),
        "source_site": w.source_site,
        "target_site": w.target_site,
        "subjects": [str(s) for s in w.subjects],
        "seed": archive.seed,
        "has_partition": archive.partition is not None,
    }
    meta_bytes = json.dumps(meta).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                MAGIC, FORMAT_VERSION, w.num_classes, source_channels, target_channels, length, n
            )
        )
        f.write(_LENGTH.pack(len(meta_bytes)))
        f.write(meta_bytes)
        f.write(np.ascontiguousarray(w.source, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(w.target, dtype="<f4").tobytes())
        f.write(np.asarray(w.labels, dtype=np.uint8).tobytes())
        f.write(np.asarray(w.pair_ids, dtype="<i8").tobytes())
        f.write(np.asarray(w.start_times, dtype="<f8").tobytes())
        if archive.partition is not None:
            f.write(np.asarray(archive.partition, dtype=np.uint8).tobytes())
    logger.debug(f"Wrote {n} window pairs to {path}")
    return path


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.blob):
            raise ArchiveError(f"{self.path}: truncated archive")
        chunk = self.blob[self.offset : end]
        self.offset = end
        return chunk

    def array(self, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
        dt = np.dtype(dtype)
        count = int(np.prod(shape))
        data = self.take(count * dt.itemsize)
        return np.frombuffer(data, dtype=dt, count=count).reshape(shape)


def read_archive(path: Union[str, Path]) -> WindowArchive:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Window archive not found: {path}")
    reader = _Reader(path.read_bytes(), path)

    magic, version, k, cs, ct, length, n = _HEADER.unpack(reader.take(_HEADER.size))
    if magic != MAGIC:
        raise ArchiveError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    (meta_len,) = _LENGTH.unpack(reader.take(_LENGTH.size))
    try:
        meta: dict[str, Any] = json.loads(reader.take(meta_len).decode("utf-8"))
        class_names = tuple(meta["class_names"])
        subjects = np.asarray(meta["subjects"], dtype=object)
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ArchiveError(f"{path}: unreadable metadata: {e}") from e
    if len(class_names) != k or len(subjects) != n:
        raise ArchiveError(f"{path}: metadata disagrees with header")

    source = reader.array("<f4", (n, cs, length)).astype(np.float32)
    target = reader.array("<f4", (n, ct, length)).astype(np.float32)
    labels = reader.array("u1", (n,)).astype(np.int64)
    pair_ids = reader.array("<i8", (n,)).astype(np.int64)
    start_times = reader.array("<f8", (n,)).astype(np.float64)
    partition = reader.array("u1", (n,)).astype(np.uint8) if meta.get("has_partition") else None
    if reader.offset != len(reader.blob):
        raise ArchiveError(f"{path}: {len(reader.blob) - reader.offset} unexpected trailing bytes")
    if n and labels.max() >= k:
        raise ArchiveError(f"{path}: label index outside {k} classes")

    windows = PairedWindows(
        source=source,
        target=target,
        labels=labels,
        pair_ids=pair_ids,
        subjects=subjects,
        start_times=start_times,
        class_names=class_names,
        source_site=str(meta.get("source_site", "source")),
        target_site=str(meta.get("target_site", "target")),
    )
    logger.debug(f"Read {n} window pairs from {path}")
    return WindowArchive(
        dataset_id=str(meta.get("dataset_id", "")),
        windows=windows,
        partition=partition,
        seed=meta.get("seed"),
    )


def load_split(
    path: Union[str, Path], standardize: bool = True, swap_sites: bool = False
) -> WindowedSplit:
    """Stored partition of an archive, ready for training.

    ``swap_sites`` exchanges source and target before standardization, so the
    statistics always come from the site each partition trains on.
    """
    result = read_archive(resolve_data_path(path)).split()
    if swap_sites:
        result = result.swapped()
    if standardize:
        result, _ = standardize_pairs(result)
    return result

"""MNIST IDX ingestion and deterministic, label-stratified sampling."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CountMismatchError, ParameterError, ParseError, TruncatedError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GENERATOR = "PCG64"
N_CLASSES = 10


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (n, rows, cols) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    source: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.images) != len(self.labels):
            raise ParseError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray, **meta) -> "LabeledImageSet":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledImageSet(self.images[idx], self.labels[idx], {**self.source, **meta})


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def _header(data: bytes, magic: int, n_dims: int, what: str) -> tuple[int, ...]:
    size = 4 + 4 * n_dims
    if len(data) < 4:
        raise TruncatedError(f"{what} file too short for a magic number ({len(data)} bytes)")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise BadMagicError(f"{what} file has magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(data) < size:
        raise TruncatedError(f"{what} header needs {size} bytes, file has {len(data)}")
    return struct.unpack(">" + "I" * n_dims, data[4:size])


def parse_idx_images(data: bytes) -> np.ndarray:
    """Image payload as uint8 of shape (n, rows, cols)."""
    data = _maybe_gunzip(data)
    n, rows, cols = _header(data, IMAGE_MAGIC, 3, "image")
    need = 16 + n * rows * cols
    if len(data) < need:
        raise TruncatedError(f"image payload needs {need} bytes, file has {len(data)}")
    if len(data) > need:
        raise ParseError(f"image file has {len(data) - need} trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def parse_idx_labels(data: bytes) -> np.ndarray:
    data = _maybe_gunzip(data)
    (n,) = _header(data, LABEL_MAGIC, 1, "label")
    if len(data) < 8 + n:
        raise TruncatedError(f"label payload needs {8 + n} bytes, file has {len(data)}")
    if len(data) > 8 + n:
        raise ParseError(f"label file has {len(data) - 8 - n} trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)


def parse_idx(image_bytes: bytes, label_bytes: bytes) -> LabeledImageSet:
    """Decode an IDX image/label pair; pixels are scaled to [0, 1] by 1/255."""
    raw = parse_idx_images(image_bytes)
    labels = parse_idx_labels(label_bytes)
    if len(raw) != len(labels):
        raise CountMismatchError(f"image header counts {len(raw)}, label header counts {len(labels)}")
    if labels.size and labels.max() >= N_CLASSES:
        raise ParseError(f"label {labels.max()} is not a digit")
    return LabeledImageSet(raw / 255.0, labels, {"count": len(labels)})


def load_idx(image_path: str | Path, label_path: str | Path) -> LabeledImageSet:
    image_path, label_path = Path(image_path), Path(label_path)
    ds = parse_idx(image_path.read_bytes(), label_path.read_bytes())
    ds.source.update(images=str(image_path), labels=str(label_path))
    return ds


def _class_permutations(labels: np.ndarray, need: int, seed: int) -> list[np.ndarray]:
    if need < 0:
        raise ParameterError(f"per-class count must be non-negative, got {need}")
    rng = np.random.Generator(np.random.PCG64(seed))
    perms = []
    for c in range(N_CLASSES):
        members = np.flatnonzero(labels == c)
        if len(members) < need:
            raise ParameterError(f"class {c} has {len(members)} images, {need} requested")
        perms.append(members[rng.permutation(len(members))])
    return perms


def _interleave(columns: list[np.ndarray]) -> np.ndarray:
    # round-robin: first of every class, then second of every class, ...
    return np.stack(columns, axis=1).ravel() if columns and len(columns[0]) else np.zeros(0, dtype=np.int64)


def split_per_class(
    ds: LabeledImageSet, n_train: int, n_test: int, seed: int
) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Disjoint stratified train/test draws from one pool.

    Each class is shuffled once.  Training takes the head of the shuffled
    class and the held-out set takes its tail, so the held-out images stay the
    same for any training size that fits.
    """
    if n_train < 0 or n_test < 0:
        raise ParameterError(f"per-class counts must be non-negative, got {n_train} and {n_test}")
    perms = _class_permutations(ds.labels, n_train + n_test, seed)
    train_idx = _interleave([p[:n_train] for p in perms])
    test_idx = _interleave([p[len(p) - n_test :] for p in perms])
    meta = dict(seed=seed, generator=GENERATOR)
    return (
        ds.subset(train_idx, n_per_class=n_train, role="train", **meta),
        ds.subset(test_idx, n_per_class=n_test, role="test", **meta),
    )


def sample_per_class(ds: LabeledImageSet, n_per_class: int, seed: int) -> LabeledImageSet:
    """``n_per_class`` images of every digit, interleaved 0, 1, ..., 9, 0, 1, ..."""
    return split_per_class(ds, n_per_class, 0, seed)[0]

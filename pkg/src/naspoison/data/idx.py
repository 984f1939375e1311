"""IDX (ubyte) image/label files: big-endian int32 magic, dims, then raw bytes."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .dataset import Dataset

LABEL_MAGIC = 0x00000801
IMAGE_MAGIC = 0x00000803


def _read_header(buf: bytes, expected_magic: int, what: str) -> tuple:
    if len(buf) < 4:
        raise FormatError(f"{what}: file shorter than the magic number", 0)
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != expected_magic:
        raise FormatError(f"{what}: magic 0x{magic:08x} != 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    if len(buf) < 4 + 4 * ndim:
        raise FormatError(f"{what}: truncated dimension header", len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    offset = 4 + 4 * ndim
    need = int(np.prod(dims))
    if len(buf) - offset < need:
        raise FormatError(f"{what}: expected {need} payload bytes, found {len(buf) - offset}", len(buf))
    return dims, offset


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (n,), offset = _read_header(buf, LABEL_MAGIC, "labels")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=offset).astype(np.int64)


def read_idx_images(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    dims, offset = _read_header(buf, IMAGE_MAGIC, "images")
    n, h, w = dims
    return np.frombuffer(buf, dtype=np.uint8, count=n * h * w, offset=offset).reshape(n, h, w)


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes())


def write_idx_images(path, images) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, h, w) + images.tobytes())


def average_pool(images: np.ndarray, size: int) -> np.ndarray:
    """Block-average (n, h, w) images down to (n, size, size); h and w must be multiples."""
    n, h, w = images.shape
    if h % size or w % size:
        raise FormatError(f"cannot average-pool {h}x{w} to {size}x{size}")
    fh, fw = h // size, w // size
    return images.reshape(n, size, fh, size, fw).mean(axis=(2, 4))


def load_idx(images_path, labels_path, downsample_to: int | None = None, name: str | None = None) -> Dataset:
    images = read_idx_images(images_path).astype(np.float64)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if downsample_to is not None and downsample_to != images.shape[1]:
        images = average_pool(images, downsample_to)
    n, h, w = images.shape
    num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(images.reshape(n, h * w), labels, max(num_classes, 2),
                   name=name or Path(images_path).stem, grid_shape=(h, w))

"""IDX-format Fashion-MNIST loading and resizing."""

from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError
from ..ops import bilinear_matrix

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATASET_ENV = "INDEXNET_DATA"

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
ALL_FILES = tuple(f + ".gz" for pair in SPLIT_FILES.values() for f in pair)


def default_dataset_root() -> Path:
    return Path(os.environ.get(DATASET_ENV, Path.home() / ".cache" / "indexnet" / "fashion-mnist"))


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})", 0) from None
    return raw


def parse_idx_images(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode an IDX3 image file body into a uint8 array (n, rows, cols)."""
    if len(raw) < 16:
        raise FormatError(f"{source}: header truncated, {len(raw)} of 16 bytes", len(raw))
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{source}: bad magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}", 0)
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise FormatError(f"{source}: truncated pixel data, expected {need} bytes, found {len(raw)}", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def parse_idx_labels(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < 8:
        raise FormatError(f"{source}: header truncated, {len(raw)} of 8 bytes", len(raw))
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise FormatError(f"{source}: bad magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}", 0)
    if len(raw) < 8 + n:
        raise FormatError(f"{source}: truncated labels, expected {8 + n} bytes, found {len(raw)}", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)


def read_idx_images(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    return parse_idx_images(_read_bytes(path), str(path))


def encode_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    return struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes()


def encode_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes()


def write_idx(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the bytes reproducible
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


def resize_images(images: np.ndarray, size: int = 32, mode: str = "bilinear") -> np.ndarray:
    """Resize (n, h, w) float images to (n, size, size) by bilinear interpolation or centred zero padding."""
    n, h, w = images.shape
    if mode == "bilinear":
        ah = bilinear_matrix(h, size, np.float64)
        aw = bilinear_matrix(w, size, np.float64)
        return np.matmul(np.matmul(ah, images.astype(np.float64)), aw.T)
    if mode == "pad":
        if size < h or size < w:
            raise ConfigError(f"cannot zero-pad {h}x{w} images to {size}x{size}")
        top, left = (size - h) // 2, (size - w) // 2
        out = np.zeros((n, size, size), dtype=np.float64)
        out[:, top : top + h, left : left + w] = images
        return out
    raise ConfigError(f"unknown resize mode {mode!r}; expected 'bilinear' or 'pad'")


def find_split_file(root: str | os.PathLike, split: str) -> Path:
    root = Path(root)
    if split not in SPLIT_FILES:
        raise ConfigError(f"unknown split {split!r}; expected 'train' or 'test'")
    if root.is_file():
        return root
    stem = SPLIT_FILES[split][0]
    for name in (stem + ".gz", stem, stem.replace("-idx3-", ".idx3-")):
        if (root / name).is_file():
            return root / name
    raise FileNotFoundError(f"dataset not found: no {stem}[.gz] under {root}")


def load_fashion_mnist(
    path: str | os.PathLike,
    split: str = "train",
    size: int = 32,
    resize: str = "bilinear",
    limit: int | None = None,
) -> np.ndarray:
    """Images of one split as float32 (n, 1, size, size) scaled to [0, 1].

    ``path`` may be the directory holding the four IDX files or a single image file.
    ``limit`` keeps the first ``limit`` images.
    """
    raw = read_idx_images(find_split_file(path, split))
    if limit is not None:
        raw = raw[:limit]
    images = raw.astype(np.float64) / 255.0
    if images.shape[1:] != (size, size):
        images = resize_images(images, size, resize)
    return np.clip(images, 0.0, 1.0).astype(np.float32)[:, None]

"""Flat named-parameter archives.

An archive is a directory holding ``params.bin``, the raw little-endian
float32 values of every tensor concatenated in manifest order, and
``manifest.json`` listing ``{name, shape, offset, kind}`` for each entry.
Batch-norm running statistics are stored alongside the parameters with
``kind = "buffer"``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .nn import Module

FORMAT_VERSION = 1
DATA_FILE = "params.bin"
MANIFEST_FILE = "manifest.json"
_LE_F32 = np.dtype("<f4")


def _entries(model: Module) -> list[tuple[str, str, np.ndarray]]:
    items = [(n, "param", p.data) for n, p in model.named_parameters()]
    items += [(n, "buffer", b) for n, b in model.named_buffers()]
    return items


def save_archive(model: Module, path: str | os.PathLike, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "indexnet-params", "version": FORMAT_VERSION, "metadata": metadata or {}, "tensors": []}
    offset = 0
    with open(path / DATA_FILE, "wb") as fh:
        for name, kind, arr in _entries(model):
            raw = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
            fh.write(raw)
            manifest["tensors"].append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
            offset += len(raw)
    (path / MANIFEST_FILE).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_archive(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Manifest and a name -> float32 array mapping."""
    path = Path(path)
    manifest = json.loads((path / MANIFEST_FILE).read_text())
    if manifest.get("format") != "indexnet-params":
        raise FormatError(f"{path / MANIFEST_FILE}: not a parameter archive manifest", 0)
    raw = (path / DATA_FILE).read_bytes()
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        end = start + count * _LE_F32.itemsize
        if end > len(raw):
            raise FormatError(f"{path / DATA_FILE}: {entry['name']} runs past end of data", len(raw))
        arrays[entry["name"]] = np.frombuffer(raw, dtype=_LE_F32, count=count, offset=start).reshape(shape)
    return manifest, arrays


def load_archive(model: Module, path: str | os.PathLike) -> dict:
    """Copy archived values into ``model`` in place; returns the manifest metadata.

    Names and shapes must match exactly; extra or missing entries are errors.
    """
    manifest, arrays = read_archive(path)
    targets = {name: arr for name, _, arr in _entries(model)}
    missing = sorted(set(targets) - set(arrays))
    extra = sorted(set(arrays) - set(targets))
    if missing or extra:
        raise ConfigError(f"archive does not match model: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, dst in targets.items():
        src = arrays[name]
        if src.shape != dst.shape:
            raise ConfigError(f"archive entry {name} has shape {src.shape}, model expects {dst.shape}")
        dst[...] = src
    return manifest.get("metadata", {})

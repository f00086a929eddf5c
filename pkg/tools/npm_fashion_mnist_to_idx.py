"""Rebuild Fashion-MNIST IDX files from the ``fashion-mnist`` npm package.

Offline environments that can reach an npm registry but not the dataset
mirrors can use this instead of ``indexnet fetch-data``::

    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python tools/npm_fashion_mnist_to_idx.py package/src/clothes ~/.cache/indexnet/fashion-mnist

The package stores 7000 uint8 images per class (``<class>.json``). The first
6000 of each class become the training split and the last 1000 the test
split; both splits are shuffled with a fixed seed. The official train/test
membership is not recoverable from the package, so this split is an
approximation with the same sizes and class balance.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from indexnet.bench.data import encode_idx_images, encode_idx_labels, write_idx

PER_CLASS_TRAIN = 6000
PER_CLASS_TEST = 1000


def load_class(path: Path) -> np.ndarray:
    rows = [r for r in json.loads(path.read_text())["data"] if len(r) == 784]
    return np.asarray(rows, dtype=np.uint8).reshape(-1, 28, 28)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("clothes_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    splits = {"train": ([], []), "t10k": ([], [])}
    for label in range(10):
        imgs = load_class(args.clothes_dir / f"{label}.json")
        if len(imgs) < PER_CLASS_TRAIN + PER_CLASS_TEST:
            raise SystemExit(f"class {label}: only {len(imgs)} images")
        for name, part in (("train", imgs[:PER_CLASS_TRAIN]), ("t10k", imgs[-PER_CLASS_TEST:])):
            splits[name][0].append(part)
            splits[name][1].append(np.full(len(part), label, dtype=np.uint8))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for name, (imgs, labels) in splits.items():
        imgs, labels = np.concatenate(imgs), np.concatenate(labels)
        order = rng.permutation(len(imgs))
        write_idx(args.out_dir / f"{name}-images-idx3-ubyte.gz", encode_idx_images(imgs[order]))
        write_idx(args.out_dir / f"{name}-labels-idx1-ubyte.gz", encode_idx_labels(labels[order]))
        print(f"{name}: {len(imgs)} images -> {args.out_dir}")


if __name__ == "__main__":
    main()

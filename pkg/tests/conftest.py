
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from indexnet.bench.data import encode_idx_images, encode_idx_labels, write_idx

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _blobs(n, rng):
    """Smooth, clothing-sized blobs on a dark background, uint8 28x28."""
    yy, xx = np.mgrid[0:28, 0:28]
    out = np.zeros((n, 28, 28))
    for i in range(n):
        cy, cx = rng.uniform(9, 19, size=2)
        sy, sx = rng.uniform(3, 8, size=2)
        out[i] = np.exp(-(((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2)) * rng.uniform(0.5, 1.0)
    return (out * 255).round().astype(np.uint8)


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """A tiny gzipped IDX dataset laid out like the real one (64 train, 16 test images)."""
    root = tmp_path_factory.mktemp("fashion")
    rng = np.random.default_rng(7)
    for split, n in (("train", 64), ("t10k", 16)):
        write_idx(root / f"{split}-images-idx3-ubyte.gz", encode_idx_images(_blobs(n, rng)))
        write_idx(root / f"{split}-labels-idx1-ubyte.gz", encode_idx_labels(np.arange(n) % 10))
    return root


def real_dataset_root():
    """Directory of the real Fashion-MNIST files, or None when they are not installed."""
    from indexnet.bench.data import default_dataset_root

    root = default_dataset_root()
    if (root / "train-images-idx3-ubyte.gz").exists() or (root / "train-images-idx3-ubyte").exists():
        return root
    return None


@pytest.fixture
def real_data():
    root = real_dataset_root()
    if root is None:
        pytest.skip(f"Fashion-MNIST not found; set INDEXNET_DATA to its directory")
    return root


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    for number in range(1, 9):
        if number not in results:
            terminalreporter.write_line(f"criterion {number}: SKIP  not run in this session")

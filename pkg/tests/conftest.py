"""Shared fixtures: seeded rng, a tiny conv net and synthetic MNIST-shaped IDX files."""

import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

from nrmf.datasets import IMAGES_MAGIC, LABELS_MAGIC, MNIST_FILES
from nrmf.engine.layers import Flatten, MaxPool2, ReLU, init_conv, init_linear
from nrmf.engine.network import Network


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _toy_network(seed: int = 0) -> Network:
    """(6, 6, 2) input: 3x3 conv, pool, 3x3 conv, 1x1 conv, linear to 3 classes."""
    r = np.random.default_rng(seed)
    layers = [
        init_conv(r, "conv1", 3, 2, 3, pad=1),
        ReLU("relu1"),
        MaxPool2("pool1"),
        init_conv(r, "conv2", 3, 3, 4, pad=1),
        ReLU("relu2"),
        init_conv(r, "proj", 1, 4, 2),
        Flatten("flatten"),
        init_linear(r, "fc1", 18, 3),
    ]
    for layer in layers:
        bias = getattr(layer, "bias", None)
        if bias is not None:
            bias[:] = r.normal(scale=0.1, size=bias.shape)
    return Network(layers, (6, 6, 2), 3)


@pytest.fixture
def toy_net_factory():
    return _toy_network


@pytest.fixture
def toy_net():
    return _toy_network()


@pytest.fixture
def toy_data():
    r = np.random.default_rng(7)
    x = r.normal(size=(24, 6, 6, 2))
    y = r.integers(0, 3, size=24)
    return x, y


def write_idx(path: Path, array: np.ndarray, magic: int, compress: bool = False) -> Path:
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    data = header + np.ascontiguousarray(array, dtype=np.uint8).tobytes()
    path.write_bytes(gzip.compress(data) if compress else data)
    return path


@pytest.fixture
def idx_writer():
    return write_idx


@pytest.fixture
def mnist_dir(tmp_path):
    """64 train / 32 test random 28x28 images under the standard MNIST file names."""
    root = tmp_path / "mnist"
    root.mkdir()
    r = np.random.default_rng(3)
    for split, count in (("train", 64), ("test", 32)):
        images_stem, labels_stem = MNIST_FILES[split]
        images = r.integers(0, 256, size=(count, 28, 28), dtype=np.uint8)
        labels = (np.arange(count) % 10).astype(np.uint8)
        write_idx(root / images_stem, images, IMAGES_MAGIC)
        write_idx(root / labels_stem, labels, LABELS_MAGIC, compress=split == "test")
    return root

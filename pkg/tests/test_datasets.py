import gzip
import struct

import httpx
import numpy as np
import pytest

from nrmf.datasets import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    MNIST_FILES,
    MNIST_MEAN,
    MNIST_STD,
    Dataset,
    fetch_mnist,
    load_idx,
    load_mnist,
    parse_idx,
)
from nrmf.errors import BadMagicError, CountMismatchError, DatasetError, TruncatedFileError


def _two_image_fixture(tmp_path):
    images = (
        struct.pack(">IIII", IMAGES_MAGIC, 2, 2, 3)
        + bytes([0, 1, 2, 3, 4, 5])
        + bytes([255, 254, 253, 252, 251, 250])
    )
    labels = struct.pack(">II", LABELS_MAGIC, 2) + bytes([7, 1])
    (tmp_path / "img").write_bytes(images)
    (tmp_path / "lbl").write_bytes(labels)
    return tmp_path / "img", tmp_path / "lbl"


def test_two_image_fixture(tmp_path):
    ds = load_idx(*_two_image_fixture(tmp_path))
    assert len(ds) == 2
    assert ds.images.shape == (2, 2, 3)
    np.testing.assert_array_equal(ds.images[0], [[0, 1, 2], [3, 4, 5]])
    np.testing.assert_array_equal(ds.images[1, 1], [252, 251, 250])
    np.testing.assert_array_equal(ds.targets(), [7, 1])


def test_inputs_are_normalized_nhwc(tmp_path):
    ds = load_idx(*_two_image_fixture(tmp_path))
    x = ds.inputs()
    assert x.shape == (2, 2, 3, 1)
    assert x[0, 0, 0, 0] == pytest.approx(-MNIST_MEAN / MNIST_STD)
    assert x[1, 0, 0, 0] == pytest.approx((1.0 - MNIST_MEAN) / MNIST_STD)


def test_bad_magic(tmp_path):
    img, lbl = _two_image_fixture(tmp_path)
    with pytest.raises(BadMagicError):
        load_idx(lbl, img)


def test_truncated_file(tmp_path):
    img, lbl = _two_image_fixture(tmp_path)
    img.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(TruncatedFileError):
        load_idx(img, lbl)
    with pytest.raises(TruncatedFileError):
        parse_idx(b"\x00\x00")


def test_trailing_bytes_rejected():
    data = struct.pack(">II", LABELS_MAGIC, 1) + bytes([3, 4])
    with pytest.raises(DatasetError):
        parse_idx(data, LABELS_MAGIC)


def test_count_mismatch(tmp_path, idx_writer):
    idx_writer(tmp_path / "img", np.zeros((3, 2, 2)), IMAGES_MAGIC)
    idx_writer(tmp_path / "lbl", np.zeros(2), LABELS_MAGIC)
    with pytest.raises(CountMismatchError):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_label_range_checked():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((1, 2, 2), dtype=np.uint8), np.array([10], dtype=np.uint8))


def test_load_mnist_reads_raw_and_gzip(mnist_dir):
    train = load_mnist(mnist_dir, "train")
    test = load_mnist(mnist_dir, "test")
    assert (len(train), len(test)) == (64, 32)
    assert train.images.shape[1:] == (28, 28)
    with pytest.raises(DatasetError):
        load_mnist(mnist_dir, "validation")
    with pytest.raises(DatasetError):
        load_mnist(mnist_dir.parent, "train")


def test_subset_is_seeded_and_ordered(mnist_dir):
    train = load_mnist(mnist_dir, "train")
    a = train.subset(10, seed=4)
    b = train.subset(10, seed=4)
    np.testing.assert_array_equal(a.images, b.images)
    assert len(a) == 10
    assert train.subset(0, seed=4) is train
    assert train.subset(1000, seed=4) is train


def _recording_transport(payload: bytes, seen: list):
    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(request.url.path)
        return httpx.Response(200, content=payload)

    return httpx.MockTransport(handler)


def test_fetch_mnist_downloads_missing_files(tmp_path):
    payload = gzip.compress(struct.pack(">II", LABELS_MAGIC, 0))
    seen = []
    (tmp_path / "t10k-labels-idx1-ubyte.gz").write_bytes(b"already here")
    with httpx.Client(transport=_recording_transport(payload, seen)) as client:
        written = fetch_mnist(tmp_path, "https://mirror.test/mnist/", client=client)
    assert len(written) == 3
    assert len(seen) == 3
    assert all(path.startswith("/mnist/") for path in seen)
    assert (tmp_path / "t10k-labels-idx1-ubyte.gz").read_bytes() == b"already here"
    stem = MNIST_FILES["train"][0]
    assert (tmp_path / f"{stem}.gz").read_bytes() == payload


def test_fetch_mnist_http_error(tmp_path):
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(503)

    with httpx.Client(transport=httpx.MockTransport(handler)) as client:
        with pytest.raises(DatasetError):
            fetch_mnist(tmp_path, "https://mirror.test/", client=client)

"""
MNIST in IDX format: parsing, normalization, seeded subsets and download.

IDX header (big-endian): magic u32 (0x00000803 images, 0x00000801 labels),
then one u32 per dimension, then unsigned bytes in row-major order.
Files may be gzip-compressed (.gz).
"""

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

from nrmf.errors import BadMagicError, CountMismatchError, DatasetError, TruncatedFileError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MNIST_MEAN = 0.1307
MNIST_STD = 0.3081
NUM_CLASSES = 10
USER_AGENT = "nrmf/0.1"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    """Grayscale images (N, H, W) as uint8 with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise DatasetError(f"label {int(self.labels.max())} outside 0..{self.num_classes - 1}")

    def __len__(self) -> int:
        return len(self.labels)

    def inputs(self) -> np.ndarray:
        """NHWC float64 batch normalized as (value/255 - mean) / std."""
        x = self.images.astype(np.float64) / 255.0
        return ((x - MNIST_MEAN) / MNIST_STD)[..., None]

    def targets(self) -> np.ndarray:
        return self.labels.astype(np.int64)

    def subset(self, count: int, seed: int) -> "Dataset":
        """Seeded subset of count samples in ascending index order; count <= 0 or >= len keeps everything."""
        if count <= 0 or count >= len(self):
            return self
        idx = np.sort(np.random.default_rng(seed).choice(len(self), size=count, replace=False))
        return Dataset(self.images[idx], self.labels[idx], self.split, self.num_classes)


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except (OSError, EOFError) as e:
        raise DatasetError(f"cannot read {path}: {e}") from e


def parse_idx(data: bytes, expected_magic: int | None = None, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 4:
        raise TruncatedFileError(f"{source}: file ends inside the magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in (IMAGES_MAGIC, LABELS_MAGIC) or (expected_magic is not None and magic != expected_magic):
        raise BadMagicError(f"{source}: unexpected magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header_size = 4 + 4 * ndim
    if len(data) < header_size:
        raise TruncatedFileError(f"{source}: file ends inside the header")
    dims = struct.unpack(f">{ndim}I", data[4:header_size])
    count = int(np.prod(dims))
    if len(data) < header_size + count:
        raise TruncatedFileError(f"{source}: expected {count} data bytes, found {len(data) - header_size}")
    if len(data) > header_size + count:
        raise DatasetError(f"{source}: {len(data) - header_size - count} trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header_size).reshape(dims).copy()


def read_idx(path: Path, expected_magic: int | None = None) -> np.ndarray:
    return parse_idx(_read_bytes(path), expected_magic, source=str(path))


def load_idx(images_path: Path, labels_path: Path, split: str = "train") -> Dataset:
    """Load a paired images/labels IDX set."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if len(images) != len(labels):
        raise CountMismatchError(f"{images_path} has {len(images)} images, {labels_path} has {len(labels)} labels")
    return Dataset(images=images, labels=labels, split=split)


def _find(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        path = data_dir / name
        if path.exists():
            return path
    raise DatasetError(f"{stem}[.gz] not found in {data_dir}")


def load_mnist(data_dir: Path, split: str) -> Dataset:
    if split not in MNIST_FILES:
        raise DatasetError(f"unknown split {split!r}")
    images_stem, labels_stem = MNIST_FILES[split]
    data_dir = Path(data_dir)
    dataset = load_idx(_find(data_dir, images_stem), _find(data_dir, labels_stem), split)
    logger.info("loaded %d %s images from %s", len(dataset), split, data_dir)
    return dataset


def fetch_mnist(data_dir: Path, base_url: str, client: httpx.Client | None = None) -> list[Path]:
    """Download the four gzip IDX files into data_dir, skipping ones already present."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    own_client = client is None
    client = client or httpx.Client(headers={"User-Agent": USER_AGENT}, timeout=60.0, follow_redirects=True)
    written = []
    try:
        for stems in MNIST_FILES.values():
            for stem in stems:
                dest = data_dir / f"{stem}.gz"
                if dest.exists() or (data_dir / stem).exists():
                    continue
                url = base_url + dest.name
                try:
                    r = client.get(url)
                    r.raise_for_status()
                except httpx.HTTPError as e:
                    raise DatasetError(f"download of {url} failed: {e}") from e
                dest.write_bytes(r.content)
                logger.info("downloaded %s (%d bytes)", dest.name, len(r.content))
                written.append(dest)
    finally:
        if own_client:
            client.close()
    return written

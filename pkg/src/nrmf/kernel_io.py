"""
Flat binary kernel format.

Header (little-endian): magic b"NRMF", version u32, four u32 dims.
Body: D_h*D_w*S*T little-endian float64 values in C order (last index fastest).
Arrays with fewer than four dims are stored with leading ones.
"""

import struct
from pathlib import Path

import numpy as np

from nrmf.errors import KernelFormatError

MAGIC = b"NRMF"
VERSION = 1
_HEADER = struct.Struct("<4sI4I")


def encode_kernel(a: np.ndarray) -> bytes:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim > 4:
        raise KernelFormatError(f"cannot store a {arr.ndim}-way array")
    dims = (1,) * (4 - arr.ndim) + arr.shape
    header = _HEADER.pack(MAGIC, VERSION, *dims)
    return header + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def decode_kernel(data: bytes) -> np.ndarray:
    """Parse bytes written by encode_kernel into a 4-way float64 array."""
    if len(data) < _HEADER.size:
        raise KernelFormatError(f"truncated header: {len(data)} bytes")
    magic, version, *dims = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise KernelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise KernelFormatError(f"unsupported version {version}")
    count = int(np.prod(dims))
    expected = _HEADER.size + 8 * count
    if len(data) != expected:
        raise KernelFormatError(f"expected {expected} bytes for dims {tuple(dims)}, got {len(data)}")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=_HEADER.size)
    return values.astype(np.float64).reshape(dims)


def write_kernel(path: Path, a: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_kernel(a))


def read_kernel(path: Path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise KernelFormatError(f"cannot read {path}: {e}") from e
    return decode_kernel(data)

import struct

import numpy as np
import pytest

from nrmf.errors import KernelFormatError
from nrmf.kernel_io import MAGIC, decode_kernel, encode_kernel, read_kernel, write_kernel


def test_write_then_read_is_exact(tmp_path, rng):
    k = rng.normal(size=(3, 3, 4, 5))
    path = tmp_path / "nested" / "k.nrmf"
    write_kernel(path, k)
    np.testing.assert_array_equal(read_kernel(path), k)


def test_layout_is_little_endian_c_order():
    k = np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2)
    data = encode_kernel(k)
    assert data[:4] == MAGIC
    assert struct.unpack_from("<I4I", data, 4) == (1, 1, 1, 2, 2)
    assert np.frombuffer(data[24:], dtype="<f8").tolist() == [0.0, 1.0, 2.0, 3.0]


def test_lower_rank_arrays_get_leading_ones():
    assert decode_kernel(encode_kernel(np.ones(5))).shape == (1, 1, 1, 5)
    assert decode_kernel(encode_kernel(np.ones((2, 3)))).shape == (1, 1, 2, 3)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: b"XXXX" + d[4:],
        lambda d: d[:4] + struct.pack("<I", 9) + d[8:],
        lambda d: d[:-8],
        lambda d: d + b"\x00",
        lambda d: d[:10],
    ],
)
def test_corrupt_data_raises(mutate):
    data = encode_kernel(np.ones((1, 1, 2, 2)))
    with pytest.raises(KernelFormatError):
        decode_kernel(mutate(data))


def test_missing_file_raises(tmp_path):
    with pytest.raises(KernelFormatError):
        read_kernel(tmp_path / "absent.nrmf")

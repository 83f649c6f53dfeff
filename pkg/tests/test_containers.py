import struct

import numpy as np
import pytest

from rgbp.containers import dumps_tensor, dumps_weights, load_tensor, loads_tensor, loads_weights, save_tensor
from rgbp.errors import FormatError


@pytest.mark.parametrize("dtype", ["<f4", "<f8", "u1", "<u2", "<i4", "<i8"])
def test_tensor_round_trip(rng, dtype, tmp_path):
    arr = (rng.standard_normal((2, 3, 4)) * 100).astype(dtype)
    back = loads_tensor(dumps_tensor(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()
    save_tensor(tmp_path / "t.rgbpt", arr)
    assert load_tensor(tmp_path / "t.rgbpt").tobytes() == arr.tobytes()


def test_scalar_and_big_endian():
    assert loads_tensor(dumps_tensor(np.float64(3.5))) == 3.5
    be = np.arange(4, dtype=">f4")
    assert np.array_equal(loads_tensor(dumps_tensor(be)), be)


def test_header_layout():
    buf = dumps_tensor(np.zeros((2, 3), dtype="<f4"))
    assert buf[:5] == b"RGBPT"
    assert struct.unpack("<HBB2I", buf[5:17]) == (1, 1, 2, 2, 3)
    assert len(buf) == 17 + 24


def test_truncated():
    buf = dumps_tensor(np.ones((4, 4)))
    for cut in (3, 6, 9, 14, len(buf) - 1):
        with pytest.raises(FormatError):
            loads_tensor(buf[:cut])


def test_bad_magic_and_version():
    buf = dumps_tensor(np.ones(3))
    with pytest.raises(FormatError, match="at byte 0"):
        loads_tensor(b"XXXXX" + buf[5:])
    with pytest.raises(FormatError):
        loads_tensor(buf[:5] + struct.pack("<H", 9) + buf[7:])


def test_dims_overflow_guard():
    head = b"RGBPT" + struct.pack("<HBB", 1, 2, 3) + struct.pack("<3I", 0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF)
    with pytest.raises(FormatError):
        loads_tensor(head + b"\0" * 16)


def test_unknown_dtype_and_trailing():
    buf = bytearray(dumps_tensor(np.ones(2, dtype="<f4")))
    buf[7] = 99
    with pytest.raises(FormatError):
        loads_tensor(bytes(buf))
    with pytest.raises(FormatError):
        loads_tensor(dumps_tensor(np.ones(2)) + b"\0")
    with pytest.raises(FormatError):
        dumps_tensor(np.ones(2, dtype=np.complex64))


def test_weights_round_trip(rng):
    named = {"a.weight": rng.standard_normal((3, 2)), "b": np.arange(5, dtype=np.float32)}
    back = loads_weights(dumps_weights(named))
    assert list(back) == list(named)
    for k in named:
        assert back[k].tobytes() == named[k].tobytes() and back[k].dtype == named[k].dtype


def test_weights_truncated_names_entry():
    buf = dumps_weights({"first": np.ones(2), "second": np.ones(3)})
    with pytest.raises(FormatError, match="second"):
        loads_weights(buf[:-4])

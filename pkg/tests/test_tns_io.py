"""Binary tensor container round trips and format policing."""

import struct

import numpy as np
import pytest

from egowm.tensor import TnsFormatError, read_tns, write_tns


def test_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((3, 4, 5)).astype(np.float32)
    path = tmp_path / "a.tns"
    write_tns(path, arr)
    back = read_tns(path)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, arr)


def test_header_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "b.tns"
    write_tns(path, arr)
    raw = path.read_bytes()
    assert raw[:4] == b"TNSR"
    assert raw[4] == 1
    assert struct.unpack_from("<I", raw, 5)[0] == 2
    assert struct.unpack_from("<2I", raw, 9) == (2, 3)
    assert raw[17] == 1  # dtype code: float32
    np.testing.assert_array_equal(
        np.frombuffer(raw, dtype="<f4", offset=18), arr.reshape(-1)
    )


def test_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "c.tns"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(TnsFormatError, match="magic"):
        read_tns(path)

    good = tmp_path / "d.tns"
    write_tns(good, np.ones((4, 4), np.float32))
    clipped = tmp_path / "e.tns"
    clipped.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(TnsFormatError, match="truncated"):
        read_tns(clipped)


def test_float64_input_is_stored_as_float32(tmp_path):
    arr = np.array([1.0, 2.0, 3.0], dtype=np.float64)
    path = tmp_path / "f.tns"
    write_tns(path, arr)
    assert read_tns(path).dtype == np.float32

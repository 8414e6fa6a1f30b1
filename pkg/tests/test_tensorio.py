from __future__ import annotations

import io
import struct

import numpy as np
import pytest

from rtda import tensorio
from rtda.errors import FormatError


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(3,), (2, 4), (1, 2, 3, 4), ()]:
        arr = rng.normal(size=shape)
        p = tmp_path / "t.rtns"
        tensorio.save_tensor(p, arr)
        back = tensorio.load_tensor(p)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)
        assert back.dtype == np.float64


def test_round_trip_special_values(tmp_path):
    arr = np.array([0.0, -0.0, 1e-308, 1e308, np.pi])
    p = tmp_path / "s.rtns"
    tensorio.save_tensor(p, arr)
    assert tensorio.load_tensor(p).tobytes() == arr.tobytes()


def test_multiple_records_in_one_stream():
    buf = io.BytesIO()
    a = np.arange(6.0).reshape(2, 3)
    b = np.array([7.0])
    tensorio.write_tensor(buf, a)
    tensorio.write_tensor(buf, b)
    buf.seek(0)
    assert np.array_equal(tensorio.read_tensor(buf), a)
    assert np.array_equal(tensorio.read_tensor(buf), b)


def test_header_layout_is_as_documented():
    buf = io.BytesIO()
    tensorio.write_tensor(buf, np.zeros((2, 3)))
    raw = buf.getvalue()
    assert raw[:4] == b"RTNS"
    assert raw[4] == 1  # version
    assert raw[5] == 2  # rank
    assert struct.unpack("<II", raw[6:14]) == (2, 3)
    assert len(raw) == 14 + 6 * 8


def test_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        tensorio.read_tensor(io.BytesIO(b"NOPE" + bytes(20)))


def test_unsupported_version():
    buf = io.BytesIO()
    tensorio.write_tensor(buf, np.zeros(2))
    raw = bytearray(buf.getvalue())
    raw[4] = 2
    with pytest.raises(FormatError, match="version"):
        tensorio.read_tensor(io.BytesIO(bytes(raw)))


def test_truncations():
    buf = io.BytesIO()
    tensorio.write_tensor(buf, np.zeros((2, 2)))
    raw = buf.getvalue()
    with pytest.raises(FormatError):
        tensorio.read_tensor(io.BytesIO(raw[:3]))
    with pytest.raises(FormatError):
        tensorio.read_tensor(io.BytesIO(raw[:8]))
    with pytest.raises(FormatError):
        tensorio.read_tensor(io.BytesIO(raw[:-1]))

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from fissioncv.errors import DimensionError, FormatError, InvalidParameterError
from fissioncv.tensors import (
    SeedSpec,
    as_tensor,
    decode_tensor,
    encode_tensor,
    gaussian_noise,
    load_measurement,
    quantize_u8,
    read_pgm,
    read_tensor,
    write_pgm,
    write_tensor,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_as_tensor_rejects_nonfinite_and_is_read_only():
    t = as_tensor([[1.0, 2.0]])
    assert t.dtype == np.float64 and not t.flags.writeable
    with pytest.raises(InvalidParameterError):
        as_tensor([1.0, np.nan])
    with pytest.raises(InvalidParameterError):
        as_tensor([np.inf])
    with pytest.raises(DimensionError):
        as_tensor(np.zeros((0, 3)))


def test_as_tensor_does_not_touch_caller_array():
    src = np.ones(3)
    t = as_tensor(src)
    assert src.flags.writeable
    src[0] = 5.0
    assert t[0] == 1.0


def test_gaussian_noise_deterministic_per_seed():
    a = gaussian_noise([4], 1.0, SeedSpec(7, (3,)))
    b = gaussian_noise([4], 1.0, SeedSpec(7, (3,)))
    np.testing.assert_array_equal(a, b)
    c = gaussian_noise([4], 1.0, SeedSpec(7, (4,)))
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_gaussian_noise_rejects_nonpositive_sigma(sigma):
    with pytest.raises(InvalidParameterError):
        gaussian_noise([4], sigma, SeedSpec(0))


def test_gaussian_noise_mean_and_stream_independence():
    s = 10**5
    a = gaussian_noise([s], 1.0, SeedSpec(11, (0,)))
    b = gaussian_noise([s], 1.0, SeedSpec(11, (1,)))
    assert abs(a.mean()) < 5 / np.sqrt(s)
    assert abs(np.corrcoef(a, b)[0, 1]) < 5 / np.sqrt(s)


def test_seed_spec_validation_and_children():
    root = SeedSpec(3)
    assert root.child(1, 2) == SeedSpec(3, (1, 2))
    assert root.child(1).child(2) == root.child(1, 2)
    with pytest.raises(InvalidParameterError):
        SeedSpec(-1)
    with pytest.raises(InvalidParameterError):
        SeedSpec(2**64)
    with pytest.raises(InvalidParameterError):
        SeedSpec(0, (-1,))


def test_ft64_round_trip_2x3(tmp_path):
    t = np.arange(6, dtype=float).reshape(2, 3) / 7
    write_tensor(tmp_path / "t.ft64", t)
    back = read_tensor(tmp_path / "t.ft64")
    assert back.shape == (2, 3)
    np.testing.assert_array_equal(back, t)


def test_ft64_layout_is_little_endian():
    buf = encode_tensor(np.array([[1.5, -2.0]]))
    assert buf[:4] == b"FT64"
    assert buf[4] == 2
    assert struct.unpack("<2I", buf[5:13]) == (1, 2)
    assert struct.unpack("<2d", buf[13:]) == (1.5, -2.0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, array_shapes(min_dims=1, max_dims=4, max_side=5), elements=finite))
def test_ft64_round_trip_is_bit_exact(t):
    back = decode_tensor(encode_tensor(t))
    assert back.shape == t.shape
    assert back.tobytes() == np.ascontiguousarray(t).tobytes()


def test_ft64_bad_magic(tmp_path):
    buf = b"XXXX" + encode_tensor(np.zeros(2))[4:]
    with pytest.raises(FormatError) as exc:
        decode_tensor(buf)
    assert exc.value.offset == 0


def test_ft64_truncated_payload():
    header = b"FT64" + struct.pack("<B2I", 2, 2, 3)
    buf = header + struct.pack("<5d", *range(5))
    with pytest.raises(FormatError, match="truncated payload") as exc:
        decode_tensor(buf)
    assert exc.value.offset == len(buf)


def test_ft64_dim_overflow_and_trailing_bytes():
    huge = b"FT64" + struct.pack("<B3I", 3, 2**32 - 1, 2**32 - 1, 2**32 - 1)
    with pytest.raises(FormatError, match="overflow"):
        decode_tensor(huge)
    with pytest.raises(FormatError, match="trailing"):
        decode_tensor(encode_tensor(np.zeros(2)) + b"\0")
    with pytest.raises(FormatError):
        decode_tensor(b"FT6")


def test_pgm_zeros_and_endpoints(tmp_path):
    p = tmp_path / "z.pgm"
    p.write_bytes(b"P5\n8 8\n255\n" + bytes(64))
    np.testing.assert_array_equal(read_pgm(p), np.zeros((8, 8)))
    q = tmp_path / "e.pgm"
    q.write_bytes(b"P2\n# a comment\n2 1\n255\n0 255\n")
    np.testing.assert_array_equal(read_pgm(q), [[0.0, 1.0]])


def test_pgm_round_half_up():
    assert quantize_u8(0.5) == 128
    assert quantize_u8(-3.0) == 0 and quantize_u8(2.0) == 255


@pytest.mark.parametrize("ascii_", [False, True])
def test_pgm_round_trip(tmp_path, ascii_):
    img = np.arange(12, dtype=float).reshape(3, 4) * 20 / 255
    write_pgm(tmp_path / "r.pgm", img, ascii=ascii_)
    np.testing.assert_allclose(read_pgm(tmp_path / "r.pgm"), img, atol=1e-15)


def test_pgm_rejects_color_and_16bit(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(FormatError):
        read_pgm(p)
    q = tmp_path / "w.pgm"
    q.write_bytes(b"P5\n1 1\n65535\n\0\0")
    with pytest.raises(FormatError, match="maxval"):
        read_pgm(q)


def test_load_measurement_dispatch(tmp_path):
    write_tensor(tmp_path / "a.ft64", np.ones((2, 2)))
    write_pgm(tmp_path / "a.pgm", np.ones((2, 2)))
    np.testing.assert_array_equal(load_measurement(tmp_path / "a.ft64"), np.ones((2, 2)))
    np.testing.assert_array_equal(load_measurement(tmp_path / "a.pgm"), np.ones((2, 2)))
    (tmp_path / "junk").write_bytes(b"hello")
    with pytest.raises(FormatError):
        load_measurement(tmp_path / "junk")

import struct

import numpy as np
import pytest

from rowflow.nn.data import FormatError, load_idx, read_idx, synthetic_blobs, write_idx
from rowflow.rng import Rng


def idx_bytes(code, dims, payload):
    return bytes([0, 0, code, len(dims)]) + struct.pack(f">{len(dims)}I", *dims) + payload


def test_header_dims(tmp_path):
    p = tmp_path / "img.idx"
    p.write_bytes(idx_bytes(0x08, (10, 8, 8), bytes(range(256)) * 2 + bytes(128)))
    a = read_idx(p)
    assert a.shape == (10, 8, 8) and a.dtype == np.uint8


def test_truncated_payload(tmp_path):
    p = tmp_path / "img.idx"
    p.write_bytes(idx_bytes(0x08, (10, 8, 8), bytes(600)))
    with pytest.raises(FormatError, match=r"expected 656 .* got 616") as err:
        read_idx(p)
    assert "byte offset 16" in str(err.value)


def test_bad_magic(tmp_path):
    p = tmp_path / "img.idx"
    p.write_bytes(b"\x01\x02\x08\x01\x00\x00\x00\x01\x00")
    with pytest.raises(FormatError, match="byte offset 0"):
        read_idx(p)


def test_round_trip_synthetic(tmp_path):
    x, y = synthetic_blobs(30, Rng(0))
    write_idx(tmp_path / "x.idx", x[:, 0])
    write_idx(tmp_path / "y.idx", y.astype(np.uint8))
    x2, y2 = load_idx(tmp_path / "x.idx", tmp_path / "y.idx")
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_array_equal(y2, y)


def test_uint8_images_are_scaled(tmp_path):
    write_idx(tmp_path / "x.idx", np.array([[[0, 255], [51, 102]]], dtype=np.uint8))
    write_idx(tmp_path / "y.idx", np.array([1], dtype=np.uint8))
    x, y = load_idx(tmp_path / "x.idx", tmp_path / "y.idx")
    assert x.shape == (1, 1, 2, 2) and x.ravel().tolist() == [0.0, 1.0, 0.2, 0.4]
    assert y.tolist() == [1]


def test_label_count_mismatch(tmp_path):
    write_idx(tmp_path / "x.idx", np.zeros((2, 3, 3), dtype=np.uint8))
    write_idx(tmp_path / "y.idx", np.zeros(3, dtype=np.uint8))
    with pytest.raises(FormatError):
        load_idx(tmp_path / "x.idx", tmp_path / "y.idx")


def test_synthetic_blobs_shape_and_range():
    x, y = synthetic_blobs(200, Rng(1))
    assert x.shape == (200, 1, 8, 8) and set(y.tolist()) == {0, 1, 2}
    assert x.min() == 0.0 and x.max() <= 1.0
    assert 0.1 < np.mean(x != 0) < 0.9

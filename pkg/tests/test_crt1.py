"""Round-trip and corruption behavior of the CRT1 tensor file format."""

import struct

import numpy as np
import pytest

from cred.crt1 import FormatError, max_abs_diff, read_tensor, write_tensor


def test_round_trip_exact_for_f32_values(tmp_path):
    arr = np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32)
    path = tmp_path / "x.crt1"
    write_tensor(path, arr.astype(np.float64))
    back = read_tensor(path)
    assert back.dtype == np.float32
    assert back.shape == (3, 4, 5)
    np.testing.assert_array_equal(back, arr)


def test_scalar_and_vector_ranks(tmp_path):
    for arr in (np.float64(3.25).reshape(()), np.arange(7.0)):
        path = tmp_path / "r.crt1"
        write_tensor(path, arr)
        back = read_tensor(path)
        assert back.shape == arr.shape
        np.testing.assert_array_equal(back, arr.astype(np.float32))


def test_header_layout_is_little_endian(tmp_path):
    path = tmp_path / "h.crt1"
    write_tensor(path, np.zeros((2, 3)))
    blob = path.read_bytes()
    assert blob[:4] == b"CRT1"
    rank, h, w = struct.unpack("<3I", blob[4:16])
    assert (rank, h, w) == (2, 2, 3)
    assert len(blob) == 16 + 2 * 3 * 4


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.crt1"
    write_tensor(path, np.ones(4))
    blob = bytearray(path.read_bytes())
    blob[0] = ord(b"X")
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        read_tensor(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "trunc.crt1"
    write_tensor(path, np.ones((4, 4)))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        read_tensor(path)


def test_non_finite_values_refused(tmp_path):
    with pytest.raises(ValueError):
        write_tensor(tmp_path / "inf.crt1", np.array([1.0, np.inf]))


def test_max_abs_diff_measures_on_the_f32_grid(tmp_path):
    stored = np.array([1.0, 2.0], dtype=np.float32)
    # A float64 value inside one f32 ulp of the stored number must compare
    # as exactly equal once snapped to the storage grid.
    current = stored.astype(np.float64) + 1e-9
    assert max_abs_diff(current, stored) == 0.0
    assert max_abs_diff(current + 0.5, stored) == pytest.approx(0.5)

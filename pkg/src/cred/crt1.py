"""Tiny binary tensor file format used for goldens and checkpoints.

Layout, all little-endian:
  4 bytes  magic ``CRT1``
  u32      rank
  u32[rank] extents
  f32[...] payload, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CRT1"


class FormatError(ValueError):
    """Raised on a malformed or truncated tensor file."""


def write_tensor(path, array) -> None:
    arr = np.asarray(array, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"refusing to write non-finite values to {path}")
    payload = arr.astype("<f4").tobytes(order="C")
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a CRT1 file")
    (rank,) = struct.unpack_from("<I", raw, 4)
    if rank > 32:
        raise FormatError(f"{path}: implausible rank {rank}")
    offset = 8
    if len(raw) < offset + 4 * rank:
        raise FormatError(f"{path}: truncated extent list")
    extents = struct.unpack_from(f"<{rank}I", raw, offset) if rank else ()
    offset += 4 * rank
    count = int(np.prod(extents, dtype=np.int64)) if rank else 1
    expected = offset + 4 * count
    if len(raw) != expected:
        raise FormatError(f"{path}: payload size {len(raw) - offset}, expected {4 * count}")
    data = np.frombuffer(raw, dtype="<f4", offset=offset, count=count)
    return data.reshape(extents).astype(np.float32)


def max_abs_diff(current, stored: np.ndarray) -> float:
    """Largest |difference| after rounding ``current`` to the stored f32 grid."""
    cur = np.asarray(current, dtype=np.float64).astype(np.float32)
    if cur.shape != stored.shape:
        raise FormatError(f"shape mismatch: computed {cur.shape}, stored {stored.shape}")
    if cur.size == 0:
        return 0.0
    return float(np.max(np.abs(cur.astype(np.float64) - stored.astype(np.float64))))

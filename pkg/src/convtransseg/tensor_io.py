"""Raw tensor file format CTS-T1.

Layout: 8-byte magic "CTSTEN01", 1 dtype byte (0 = float32 little-endian),
1 rank byte, rank x 8-byte little-endian unsigned extents, then the row-major
payload. Round trips are bit-exact.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import DataError

MAGIC = b"CTSTEN01"
_DTYPE_F32 = 0

__all__ = ["MAGIC", "write_tensor", "read_tensor", "tensor_nbytes"]


def tensor_nbytes(arr: np.ndarray) -> int:
    """Size in bytes of the CTS-T1 record for `arr`."""
    return len(MAGIC) + 2 + 8 * arr.ndim + 4 * arr.size


def write_tensor(dest: Union[str, Path, BinaryIO], arr: np.ndarray) -> int:
    """Write one CTS-T1 record; returns the number of bytes written."""
    if arr.dtype != np.float32:
        raise DataError(f"CTS-T1 stores float32 tensors; got {arr.dtype} (cast explicitly first)")
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as f:
            return write_tensor(f, arr)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    dest.write(MAGIC)
    dest.write(struct.pack("<BB", _DTYPE_F32, arr.ndim))
    for extent in arr.shape:
        dest.write(struct.pack("<Q", extent))
    dest.write(payload)
    return len(MAGIC) + 2 + 8 * arr.ndim + len(payload)


def read_tensor(src: Union[str, Path, BinaryIO]) -> np.ndarray:
    """Read one CTS-T1 record from a path or an open stream."""
    if isinstance(src, (str, Path)):
        with open(src, "rb") as f:
            return read_tensor(f)
    magic = src.read(len(MAGIC))
    if magic != MAGIC:
        raise DataError(f"bad CTS-T1 magic: {magic!r}")
    head = src.read(2)
    if len(head) != 2:
        raise DataError("truncated CTS-T1 header")
    dtype_code, rank = struct.unpack("<BB", head)
    if dtype_code != _DTYPE_F32:
        raise DataError(f"unsupported CTS-T1 dtype code {dtype_code}")
    shape = []
    for _ in range(rank):
        raw = src.read(8)
        if len(raw) != 8:
            raise DataError("truncated CTS-T1 extent list")
        shape.append(struct.unpack("<Q", raw)[0])
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = src.read(4 * count)
    if len(payload) != 4 * count:
        raise DataError("truncated CTS-T1 payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()

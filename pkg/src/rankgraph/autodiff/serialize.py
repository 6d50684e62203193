"""RGT1 tensor encoding: magic, u32 rows, u32 cols, row-major little-endian f64."""
from __future__ import annotations

import struct

import numpy as np

from ..errors import ParseError
from .tensor import Tensor

MAGIC = b"RGT1"
_HEADER = struct.Struct("<4sII")


def tensor_to_bytes(t: Tensor) -> bytes:
    rows, cols = t.shape
    return _HEADER.pack(MAGIC, rows, cols) + t.values.astype("<f8").tobytes(order="C")


def tensor_from_bytes(data: bytes) -> Tensor:
    if len(data) < _HEADER.size:
        raise ParseError("truncated tensor header")
    magic, rows, cols = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad tensor magic {magic!r}")
    expected = _HEADER.size + rows * cols * 8
    if len(data) != expected:
        raise ParseError(f"tensor payload is {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    return Tensor(values)

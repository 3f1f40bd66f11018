"""QTNS binary tensor files and named-tensor checkpoints.

Layout of one tensor block::

    b"QTNS" | u8 version (1) | u8 ndim | ndim x u32-LE dims | f32-LE payload

A checkpoint is a sequence of ``u16-LE name length | UTF-8 name | block``.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .exceptions import ParseError, ShapeError

MAGIC = b"QTNS"
VERSION = 1

__all__ = [
    "encode_tensor",
    "decode_tensor",
    "write_tensor",
    "read_tensor",
    "write_checkpoint",
    "read_checkpoint",
]


def encode_tensor(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 255:
        raise ShapeError("QTNS supports at most 255 dims")
    head = MAGIC + struct.pack("<BB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ParseError(f"truncated QTNS data while reading {what}")
    return buf


def _decode_from(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4, "magic") != MAGIC:
        raise ParseError("bad QTNS magic")
    version, ndim = struct.unpack("<BB", _read_exact(fh, 2, "header"))
    if version != VERSION:
        raise ParseError(f"unsupported QTNS version {version}")
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims"))
    count = int(np.prod(dims)) if dims else 1
    payload = _read_exact(fh, 4 * count, "payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def decode_tensor(buf: bytes) -> np.ndarray:
    fh = io.BytesIO(buf)
    arr = _decode_from(fh)
    if fh.read(1):
        raise ParseError("trailing bytes after QTNS block")
    return arr


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    """Read one QTNS file; values come back as float32."""
    return decode_tensor(Path(path).read_bytes())


def write_checkpoint(path, tensors: Iterable[tuple[str, object]]) -> None:
    out = bytearray()
    for name, arr in tensors:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw + encode_tensor(arr)
    Path(path).write_bytes(bytes(out))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    fh = io.BytesIO(Path(path).read_bytes())
    tensors: dict[str, np.ndarray] = {}
    while True:
        head = fh.read(2)
        if not head:
            return tensors
        if len(head) != 2:
            raise ParseError("truncated checkpoint entry")
        (n,) = struct.unpack("<H", head)
        name = _read_exact(fh, n, "name").decode("utf-8")
        tensors[name] = _decode_from(fh)

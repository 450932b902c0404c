"""TGRD binary tensor files.

Dense layout (version 1):

    magic   4 bytes  b"TGRD"
    version 1 byte   (1)
    dtype   1 byte   0 = real float64, 1 = complex (interleaved re,im float64)
    order   1 byte   d
    dims    d x u64 little-endian
    payload little-endian float64, row-major; complex stored as (re, im) pairs

Sparse COO layout: same header, then u64 nnz, nnz u64 flat offsets
(row-major, sorted ascending), then nnz values in the dtype's encoding.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"TGRD"
VERSION = 1
_DTYPE_REAL = 0
_DTYPE_COMPLEX = 1


class TgrdFormatError(ValueError):
    """Raised when a file is not a valid TGRD stream."""


def _dtype_code(arr: np.ndarray) -> int:
    if np.iscomplexobj(arr):
        return _DTYPE_COMPLEX
    return _DTYPE_REAL


def _write_header(fh: BinaryIO, shape: tuple[int, ...], dtype_code: int) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", VERSION, dtype_code))
    fh.write(struct.pack("<B", len(shape)))
    for s in shape:
        fh.write(struct.pack("<Q", s))


def _read_header(fh: BinaryIO) -> tuple[tuple[int, ...], int]:
    magic = fh.read(4)
    if magic != MAGIC:
        raise TgrdFormatError(f"bad magic {magic!r}")
    head = fh.read(2)
    if len(head) != 2:
        raise TgrdFormatError("truncated header")
    version, dtype_code = struct.unpack("<BB", head)
    if version != VERSION:
        raise TgrdFormatError(f"unsupported version {version}")
    if dtype_code not in (_DTYPE_REAL, _DTYPE_COMPLEX):
        raise TgrdFormatError(f"unknown dtype code {dtype_code}")
    raw = fh.read(1)
    if len(raw) != 1:
        raise TgrdFormatError("truncated header")
    (order,) = struct.unpack("<B", raw)
    if order < 1:
        raise TgrdFormatError("tensor order must be >= 1")
    dims_raw = fh.read(8 * order)
    if len(dims_raw) != 8 * order:
        raise TgrdFormatError("truncated dims")
    shape = struct.unpack(f"<{order}Q", dims_raw)
    if any(s == 0 for s in shape):
        raise TgrdFormatError("zero dimension")
    return tuple(int(s) for s in shape), dtype_code


def _encode_values(values: np.ndarray) -> bytes:
    if np.iscomplexobj(values):
        flat = np.empty(2 * values.size, dtype="<f8")
        flat[0::2] = values.real.ravel()
        flat[1::2] = values.imag.ravel()
    else:
        flat = np.ascontiguousarray(values.ravel(), dtype="<f8")
    return flat.tobytes()


def _decode_values(raw: bytes, count: int, dtype_code: int) -> np.ndarray:
    scalars = count * (2 if dtype_code == _DTYPE_COMPLEX else 1)
    if len(raw) != 8 * scalars:
        raise TgrdFormatError("payload length mismatch")
    flat = np.frombuffer(raw, dtype="<f8")
    if dtype_code == _DTYPE_COMPLEX:
        return (flat[0::2] + 1j * flat[1::2]).astype(np.complex128)
    return flat.astype(np.float64)


def write_dense(path, t: np.ndarray) -> None:
    """Write a dense tensor as a version-1 TGRD file."""
    t = np.asarray(t)
    if t.ndim < 1:
        t = t.reshape(1)
    with open(path, "wb") as fh:
        _write_header(fh, t.shape, _dtype_code(t))
        fh.write(_encode_values(t))


def read_dense(path) -> np.ndarray:
    """Read a dense TGRD file; rejects wrong magic/version and short payloads."""
    with open(path, "rb") as fh:
        shape, dtype_code = _read_header(fh)
        raw = fh.read()
    count = int(np.prod(shape))
    values = _decode_values(raw, count, dtype_code)
    return values.reshape(shape)


def write_sparse(path, shape: tuple[int, ...], offsets: np.ndarray, values: np.ndarray) -> None:
    """Write a sparse COO tensor: TGRD header + u64 nnz + offsets + values."""
    offsets = np.ascontiguousarray(offsets, dtype="<u8")
    values = np.asarray(values)
    if offsets.shape != (values.size,):
        raise ValueError("offsets and values must align")
    with open(path, "wb") as fh:
        _write_header(fh, tuple(int(s) for s in shape), _dtype_code(values))
        fh.write(struct.pack("<Q", offsets.size))
        fh.write(offsets.tobytes())
        fh.write(_encode_values(values))


def read_sparse(path) -> tuple[tuple[int, ...], np.ndarray, np.ndarray]:
    """Read a sparse COO TGRD file -> (shape, offsets, values)."""
    with open(path, "rb") as fh:
        shape, dtype_code = _read_header(fh)
        raw = fh.read(8)
        if len(raw) != 8:
            raise TgrdFormatError("truncated nnz")
        (nnz,) = struct.unpack("<Q", raw)
        off_raw = fh.read(8 * nnz)
        if len(off_raw) != 8 * nnz:
            raise TgrdFormatError("truncated offsets")
        offsets = np.frombuffer(off_raw, dtype="<u8").astype(np.int64)
        values = _decode_values(fh.read(), nnz, dtype_code)
    size = int(np.prod(shape))
    if nnz and (offsets.min() < 0 or offsets.max() >= size):
        raise TgrdFormatError("offset out of bounds")
    return shape, offsets, values

"""Reader/writer for the TNSR little-endian tensor container.

Layout::

    b"TNSR"  version:u8 (=1)  dtype:u8 (0=f32, 1=f64)  ndim:u8  3 reserved zero bytes
    ndim x u64 dims (little-endian)
    row-major little-endian payload
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .reports import atomic_write_bytes

MAGIC = b"TNSR"
VERSION = 1
_HEADER = struct.Struct("<4sBBB3s")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


class TnsrFormatError(ValueError):
    """Malformed TNSR data; ``field`` names the offending header field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def decode(buf: bytes) -> tuple[np.ndarray, int]:
    """Parse TNSR bytes into (float64 array, dtype code)."""
    if len(buf) < _HEADER.size:
        raise TnsrFormatError("header", f"need {_HEADER.size} bytes, got {len(buf)}")
    magic, version, code, ndim, reserved = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TnsrFormatError("magic", f"expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise TnsrFormatError("version", f"unsupported version {version}")
    if code not in _DTYPES:
        raise TnsrFormatError("dtype", f"unknown dtype code {code}")
    if reserved != b"\x00\x00\x00":
        raise TnsrFormatError("reserved", "reserved bytes must be zero")
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise TnsrFormatError("dims", f"truncated: expected {ndim} dims")
    dims = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    dtype = _DTYPES[code]
    expected = math.prod(dims) * dtype.itemsize
    payload = buf[off:]
    if len(payload) != expected:
        raise TnsrFormatError(
            "payload", f"expected {expected} bytes for shape {dims}, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(np.float64)
    return arr, code


def encode(arr, dtype_code: int = 1) -> bytes:
    if dtype_code not in _DTYPES:
        raise TnsrFormatError("dtype", f"unknown dtype code {dtype_code}")
    a = np.asarray(arr)
    if a.ndim > 255:
        raise TnsrFormatError("ndim", "at most 255 dims")
    # astype to f4 rounds to nearest even
    data = np.ascontiguousarray(a, dtype=_DTYPES[dtype_code])
    head = _HEADER.pack(MAGIC, VERSION, dtype_code, a.ndim, b"\x00\x00\x00")
    return head + struct.pack(f"<{a.ndim}Q", *a.shape) + data.tobytes()


def read_tnsr(path) -> tuple[np.ndarray, int]:
    """Load a TNSR file; float32 payloads are widened to float64."""
    with open(path, "rb") as fh:
        return decode(fh.read())


def write_tnsr(path, arr, dtype_code: int = 1) -> None:
    atomic_write_bytes(path, encode(arr, dtype_code))

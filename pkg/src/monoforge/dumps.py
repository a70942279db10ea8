"""Binary field dumps: 8-byte magic, little-endian u32 dims, row-major
float64 payload."""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MNPLFRG1"


def write_field(path, values, dims=None):
    """Write a sampled field of shape (nx, ny, nt, ncomp) (trailing axes of
    the array are flattened into the component count)."""
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    if dims is None:
        if arr.ndim < 3:
            raise ValueError("field dumps need at least (nx, ny, nt)")
        ncomp = int(np.prod(arr.shape[3:], dtype=int)) if arr.ndim > 3 else 1
        dims = (arr.shape[0], arr.shape[1], arr.shape[2], ncomp)
    if int(np.prod(dims, dtype=int)) != arr.size:
        raise ValueError(f"dims {dims} do not match array size {arr.size}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", *dims))
        fh.write(arr.tobytes())


def read_field(path):
    """Read a dump; returns (array of shape (nx, ny, nt, ncomp), dims)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}; expected {MAGIC!r}")
        dims = struct.unpack("<4I", fh.read(16))
        payload = fh.read()
    arr = np.frombuffer(payload, dtype="<f8")
    if arr.size != int(np.prod(dims, dtype=int)):
        raise ValueError("truncated field dump")
    return arr.reshape(dims).copy(), dims

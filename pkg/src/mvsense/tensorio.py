"""Raw binary tensor interchange format.

Each file holds one tensor: a fixed 16-byte header (8-byte magic,
uint32 dtype code, uint32 rank), followed by ``rank`` uint64 dimension
sizes, followed by the payload in C order. Everything is little-endian
IEEE-754, so any language can read it without a serialization library.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MVTENSR1"

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<c8"): 3,
    np.dtype("<c16"): 4,
    np.dtype("<i4"): 5,
    np.dtype("<i8"): 6,
    np.dtype("u1"): 7,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def write_tensor(path, array: np.ndarray) -> None:
    """Write one array to ``path`` in the interchange format."""
    arr = np.asarray(array)
    dtype = arr.dtype.newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    arr = arr.astype(dtype, copy=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", _DTYPE_CODES[dtype], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read one array written by :func:`write_tensor`."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a tensor file (bad magic)")
    code, rank = struct.unpack("<II", raw[8:16])
    if code not in _CODE_DTYPES:
        raise ValueError(f"{path}: unknown dtype code {code}")
    head = 16 + 8 * rank
    shape = struct.unpack(f"<{rank}Q", raw[16:head])
    dtype = _CODE_DTYPES[code]
    expected = head + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated payload ({len(raw)} != {expected} bytes)")
    return np.frombuffer(raw[head:], dtype=dtype).reshape(shape).copy()

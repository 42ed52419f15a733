"""Reader/writer for the dataset interchange tensor format.

One tensor per file: 8-byte magic "MVTENSR1", uint32 dtype code, uint32
rank, then rank uint64 dims, then the little-endian C-order payload. This
mirrors the sensing toolkit's on-disk contract; the learning stack talks to
the toolkit only through these files and the JSON manifest.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MVTENSR1"

_CODE_DTYPES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<c8"),
    4: np.dtype("<c16"),
    5: np.dtype("<i4"),
    6: np.dtype("<i8"),
    7: np.dtype("u1"),
}
_DTYPE_CODES = {v: k for k, v in _CODE_DTYPES.items()}


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise ValueError(f"{path}: not an interchange tensor")
    code, rank = struct.unpack("<II", raw[8:16])
    head = 16 + 8 * rank
    shape = struct.unpack(f"<{rank}Q", raw[16:head])
    dtype = _CODE_DTYPES[code]
    return np.frombuffer(raw[head:], dtype=dtype).reshape(shape).copy()


def write_tensor(path, array: np.ndarray) -> None:
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

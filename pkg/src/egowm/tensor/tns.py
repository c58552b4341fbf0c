"""Binary tensor container used for all on-disk tensors.

Layout: magic b"TNSR", version byte 1, uint32-le rank, rank uint32-le
extents, dtype code byte (1 = float32), then the row-major little-endian
payload. Bit-exact round trips are a contract; everything written through
here is float32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
DTYPE_F32 = 1


class TnsFormatError(ValueError):
    pass


def write_tns(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(bytes([DTYPE_F32]))
        fh.write(arr.tobytes())


def read_tns(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise TnsFormatError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4] != VERSION:
        raise TnsFormatError(f"{path}: unsupported version {raw[4]}")
    (rank,) = struct.unpack_from("<I", raw, 5)
    shape = struct.unpack_from(f"<{rank}I", raw, 9)
    off = 9 + 4 * rank
    if raw[off] != DTYPE_F32:
        raise TnsFormatError(f"{path}: unsupported dtype code {raw[off]}")
    off += 1
    count = int(np.prod(shape)) if rank else 1
    if len(raw) - off < 4 * count:
        raise TnsFormatError(f"{path}: payload truncated")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
    return data.reshape(shape).astype(np.float32)

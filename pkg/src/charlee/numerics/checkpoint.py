"""Binary parameter checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"CHRL"
    version u32      currently 1
    count   u32      number of tensor records
    then per tensor:
        name_len u32, name bytes (utf-8),
        rank     u32, dims (u64 each),
        payload  float64 little-endian, C order

Round-trips are bit-exact; the test suite asserts it.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import InputError

MAGIC = b"CHRL"
VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, values in tensors.items():
            arr = np.asarray(values, dtype="<f8")  # tobytes() emits C order
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise InputError(f"{path}: not a charlee checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", data, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}Q", data, offset) if rank else ()
        offset += 8 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(dims)
        offset += 8 * n
        out[name] = arr.astype(np.float64).reshape(dims).copy()
    if offset != len(data):
        raise InputError(f"{path}: trailing bytes after last tensor record")
    return out

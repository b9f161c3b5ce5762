"""Binary weight container.

Layout (all integers unsigned 32-bit little-endian)::

    b"SVRW1"
    repeated until EOF:
        name_length, name (UTF-8), rank, extents[rank], float32 LE values (row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SVRW1"


class WeightFileError(ValueError):
    pass


def save_weights(path, arrays: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f4")   # ascontiguousarray would promote 0-d to 1-d
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise WeightFileError(f"{path}: bad magic")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 4 * count > len(blob):
                raise WeightFileError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
    except struct.error as err:
        raise WeightFileError(f"{path}: truncated ({err})") from None
    return out

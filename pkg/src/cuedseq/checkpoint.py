"""Binary checkpoint format for named parameter sets.

Layout: magic bytes ``CSW1``, then for each parameter in lexicographic
name order: name length (u32 LE), UTF-8 name, rank (u32 LE), dims
(u32 LE each), raw little-endian float64 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"CSW1"


def save_checkpoint(params: Mapping[str, Tensor], path) -> None:
    path = Path(path)
    chunks = [MAGIC]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, Tensor]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a CSW1 checkpoint (bad magic)")
    params: dict[str, Tensor] = {}
    off = 4

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ValueError(f"{path}: truncated while reading {what}")
        piece = blob[off : off + n]
        off += n
        return piece

    while off < len(blob):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(dims)) if rank else 1
        raw = take(8 * count, f"payload of {name!r}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
        params[name] = Tensor(arr, requires_grad=True)
    return params

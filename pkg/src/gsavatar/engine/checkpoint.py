"""Binary checkpoint format for named tensors.

Layout (all integers little-endian unsigned 32-bit unless noted):

    magic   8 bytes  b"GSAVCKP1"
    meta_len u32, then meta_len bytes of UTF-8 JSON (model config etc.)
    count   u32
    per tensor:
        name_len u32, name UTF-8 bytes
        rank u32, then rank u32 dims
        raw float32 payload, little-endian, C order

Round-trips are bit-exact: payloads are written from float32 buffers
without any conversion.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import DataError

MAGIC = b"GSAVCKP1"


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise DataError(f"{path}: not a checkpoint file (bad magic)")
        (meta_len,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(meta_len).decode("utf-8")) if meta_len else {}
        (count,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            payload = f.read(4 * n)
            if len(payload) != 4 * n:
                raise DataError(f"{path}: truncated payload for tensor '{name}'")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return tensors, meta

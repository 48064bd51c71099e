"""BTKD tensor checkpoint format.

Layout (little-endian)::

    b"BTKD" | u32 version | u32 n_tensors
    per tensor: u32 name_len | utf-8 name | u32 rank | u64 dims[rank] | f32 values
    u32 meta_len | utf-8 "key = value" lines

The trailing metadata block carries config records and kind tags.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"BTKD"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.array(arr, dtype="<f4", order="C")  # keeps 0-d shapes
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    text = "".join(f"{k} = {v}\n" for k, v in (meta or {}).items()).encode("utf-8")
    chunks.append(struct.pack("<I", len(text)))
    chunks.append(text)
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a BTKD checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    off = 12
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, off)
            off += 8 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims)
            off += 4 * size
            tensors[name] = arr.astype(np.float32)
        (mlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        text = buf[off:off + mlen].decode("utf-8")
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from None
    meta = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    return tensors, meta

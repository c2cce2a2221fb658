"""Checkpoint container: magic "ASG1", little-endian, version u16, then a
manifest (u32 count; per tensor: u16 name length, UTF-8 name, u8 dtype tag
(0 = float32), u8 rank, u32 extents) followed by the raw float32 payloads in
manifest order."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"ASG1"
VERSION = 1
DTYPE_F32 = 0


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = bytearray()
    payload = bytearray()
    manifest += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        raw_name = name.encode("utf-8")
        manifest += struct.pack("<H", len(raw_name)) + raw_name
        manifest += struct.pack("<BB", DTYPE_F32, arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += arr.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(bytes(manifest))
        f.write(bytes(payload))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise ValidationError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    off = 4
    (version,) = struct.unpack_from("<H", blob, off)
    off += 2
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        dtype, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        if dtype != DTYPE_F32:
            raise ValidationError(f"{path}: unknown dtype tag {dtype} for {name!r}")
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        entries.append((name, shape))
    out = {}
    for name, shape in entries:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 4 * n
        if off + nbytes > len(blob):
            raise ValidationError(f"{path}: truncated payload at tensor {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        out[name] = arr.astype(np.float32)
        off += nbytes
    if off != len(blob):
        raise ValidationError(f"{path}: {len(blob) - off} trailing bytes")
    return out

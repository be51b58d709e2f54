"""HIWT checkpoint files.

Layout (little-endian)::

    "HIWT" | version u32 | meta_len u32 | meta (UTF-8 key=value lines)
    | count u32 | count x (name_len u16 | name | ndim u8 | ndim x u64 | f32 payload)

Entries are written sorted by name, so equal contents give equal bytes.
"""
import struct

import numpy as np

MAGIC = b"HIWT"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    text = "".join(f"{k}={meta[k]}\n" for k in sorted(meta or {})).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(text)), text, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path):
    """Return ``(tensors, meta)``; tensors are float32 arrays keyed by name."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a HIWT checkpoint")
    try:
        version, meta_len = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12
        meta = {}
        for line in blob[pos : pos + meta_len].decode("utf-8").splitlines():
            key, _, value = line.partition("=")
            meta[key] = value
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(blob):
                raise CheckpointError(f"{path}: truncated payload for {name}")
            tensors[name] = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=pos).reshape(shape).astype(np.float32)
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return tensors, meta

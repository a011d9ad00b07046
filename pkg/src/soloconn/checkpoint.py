"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic   8 bytes  b"SOLOCKPT"
    version u32
    kind    u32 length + utf-8 bytes        ("base", "solo", "lora", ...)
    config  u32 length + utf-8 JSON bytes   (geometry / hyperparameter echo)
    count   u32 number of tensor records
    record  u32 name length + utf-8 name
            u8  dtype tag (0 = float64, 1 = int64)
            u32 ndim, then ndim * u64 dims
            raw little-endian payload
    sha256  32 bytes over everything above

Floats are stored as raw IEEE-754 bytes, so save -> load roundtrips are
bit-exact. The checksum is verified on every load; corrupt or truncated
files are always rejected.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointVersionError,
)

MAGIC = b"SOLOCKPT"
VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_TAGS = {np.dtype("float64"): 0, np.dtype("int64"): 1}


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray]


def write_checkpoint(path, kind: str, config: dict, tensors) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    kind_b = kind.encode("utf-8")
    buf.write(struct.pack("<I", len(kind_b)))
    buf.write(kind_b)
    cfg_b = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_b)))
    buf.write(cfg_b)
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            arr = arr.astype(np.float64)
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", _TAGS[arr.dtype]))
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(digest)


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 + 32:
        raise CheckpointFormatError(f"{path}: file too short to be a checkpoint")
    payload, digest = blob[:-32], blob[-32:]
    if payload[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint container")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointChecksumError(f"{path}: checksum mismatch, file is corrupt")

    view = io.BytesIO(payload)
    view.seek(len(MAGIC))

    def need(n: int) -> bytes:
        b = view.read(n)
        if len(b) != n:
            raise CheckpointFormatError(f"{path}: truncated record")
        return b

    (version,) = struct.unpack("<I", need(4))
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: container version {version}, expected {VERSION}")
    (kind_len,) = struct.unpack("<I", need(4))
    kind = need(kind_len).decode("utf-8")
    (cfg_len,) = struct.unpack("<I", need(4))
    try:
        config = json.loads(need(cfg_len).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path}: bad config block: {exc}") from exc
    (count,) = struct.unpack("<I", need(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", need(4))
        name = need(name_len).decode("utf-8")
        (tag,) = struct.unpack("<B", need(1))
        if tag not in _DTYPES:
            raise CheckpointFormatError(f"{path}: unknown dtype tag {tag}")
        (ndim,) = struct.unpack("<I", need(4))
        shape = tuple(struct.unpack("<Q", need(8))[0] for _ in range(ndim))
        dtype = _DTYPES[tag]
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = need(size * dtype.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return Checkpoint(kind=kind, config=config, tensors=tensors)

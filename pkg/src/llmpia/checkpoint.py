"""Binary tensor container used for parameter checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes
    version      u32
    d_h          u32
    heads        u32
    hidden_size  u32
    n_tensors    u32
    n_tensors times:
        name_len u16, name (utf-8), ndim u8, dims u32 * ndim,
        data float64 little-endian, row-major

Writing is a pure function of the header and tensors, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from llmpia.errors import CheckpointError

VERSION = 1


@dataclass(frozen=True)
class Header:
    magic: bytes
    version: int
    d_h: int
    heads: int
    hidden_size: int


def encode(header: Header, tensors: list[tuple[str, np.ndarray]]) -> bytes:
    if len(header.magic) != 8:
        raise CheckpointError("magic must be exactly 8 bytes")
    parts = [header.magic,
             struct.pack("<5I", header.version, header.d_h, header.heads,
                         header.hidden_size, len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(blob: bytes, magic: bytes) -> tuple[Header, list[tuple[str, np.ndarray]]]:
    if blob[:8] != magic:
        raise CheckpointError(f"bad magic {blob[:8]!r}, expected {magic!r}")
    version, d_h, heads, hidden, count = struct.unpack_from("<5I", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 28
    tensors = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            tensors.append((name, arr.astype(np.float64)))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return Header(magic, version, d_h, heads, hidden), tensors


def save(path, header: Header, tensors) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(header, tensors))


def load(path, magic: bytes):
    with open(path, "rb") as fh:
        return decode(fh.read(), magic)

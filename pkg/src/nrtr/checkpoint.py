"""Binary named-tensor checkpoint files.

Layout (all integers little-endian)::

    b"NRTR"                      magic
    u32 version
    u32 tensor count
    per tensor: u32 name length, UTF-8 name, u32 rank, u64 extent * rank
    payload: float32 values of every tensor, manifest order, C order
    u32 CRC32 of the payload
"""

from __future__ import annotations

import os
import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import IntegrityError, ParseError

MAGIC = b"NRTR"
VERSION = 1


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    header = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    payload = []
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        header.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(payload)
    return b"".join(header) + body + struct.pack("<I", zlib.crc32(body))


def decode(buf: bytes) -> OrderedDict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ParseError("bad checkpoint magic", 0)
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ParseError("truncated checkpoint header", pos)
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", 4)
    manifest = []
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(buf):
            raise ParseError("truncated tensor name", pos)
        try:
            name = buf[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("tensor name is not valid UTF-8", pos) from exc
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        manifest.append((name, tuple(int(s) for s in shape)))
    sizes = [int(np.prod(s, dtype=np.int64)) for _, s in manifest]
    expect = pos + 4 * sum(sizes) + 4
    if len(buf) != expect:
        raise IntegrityError(f"checkpoint length {len(buf)} does not match manifest (expected {expect})")
    body = buf[pos:expect - 4]
    (crc,) = struct.unpack_from("<I", buf, expect - 4)
    if zlib.crc32(body) != crc:
        raise IntegrityError("checkpoint checksum mismatch")
    out = OrderedDict()
    off = 0
    for (name, shape), size in zip(manifest, sizes):
        out[name] = np.frombuffer(body, dtype="<f4", count=size, offset=off).astype(np.float32).reshape(shape)
        off += 4 * size
    return out


def save(path, tensors: dict[str, np.ndarray]) -> None:
    """Write atomically via a sibling temp file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode(tensors))
    os.replace(tmp, path)


def load(path) -> OrderedDict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def model_tensors(state: dict[str, np.ndarray]) -> OrderedDict[str, np.ndarray]:
    """Drop optimizer entries, keeping only model parameters."""
    return OrderedDict((k, v) for k, v in state.items() if not k.startswith("adam."))

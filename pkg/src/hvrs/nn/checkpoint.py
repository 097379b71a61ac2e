"""Binary checkpoint files.

Layout (little-endian): ``b"HVRS"``, u32 version (1), u32 entry count, then
per entry: u16 name length, UTF-8 name, u8 rank, u32 per dimension and the
raw float32 values in C order.
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"HVRS"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(entries: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"entry name too long: {name[:40]}...")
        a = np.asarray(arr)
        if a.dtype != np.float32:
            with np.errstate(over="raise"):
                a = a.astype(np.float32)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> dict:
    def need(off, n, what):
        if off + n > len(data):
            raise CheckpointError(f"truncated checkpoint at offset {off}: expected {n} bytes of {what}")

    need(0, 12, "header")
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic at offset 0: {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    off = 12
    out = {}
    for _ in range(count):
        need(off, 2, "name length")
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        need(off, n, "name")
        try:
            name = data[off:off + n].decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"invalid entry name at offset {off}") from None
        off += n
        need(off, 1, "rank")
        rank = data[off]
        off += 1
        need(off, 4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        need(off, 4 * size, f"values of {name!r}")
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).astype(np.float32).reshape(dims)
        off += 4 * size
        out[name] = arr
    if off != len(data):
        raise CheckpointError(f"trailing bytes at offset {off}")
    return out


def save_checkpoint(entries: dict, path: str) -> None:
    """Write atomically so a crash never leaves a half-written checkpoint."""
    blob = encode_checkpoint(entries)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".ckpt")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> dict:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())

"""Versioned binary weight files.

Layout (little-endian)::

    magic      8 bytes  b"GPCNNWT\\0"
    version    u32
    arch hash  8 bytes  (parameter names and shapes)
    step       u64
    seed       i64
    n_blocks   u32
    block*     u16 name length, utf-8 name, u8 group, u8 ndim, u32 dims[ndim], float32 data
    crc32      u32 over everything above
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import ModelWeights, architecture_hash

MAGIC = b"GPCNNWT\x00"
VERSION = 1
GROUPS = ("params", "buffers", "adam_m", "adam_v")
_HEADER = struct.Struct("<8sI8sQqI")


class WeightsFormatError(ValueError):
    pass


def dumps(weights: ModelWeights) -> bytes:
    blocks = []
    for gi, group in enumerate(GROUPS):
        for name in sorted(getattr(weights, group)):
            blocks.append((gi, name, getattr(weights, group)[name]))
    out = bytearray(_HEADER.pack(MAGIC, VERSION, architecture_hash(), weights.step, weights.seed, len(blocks)))
    for gi, name, arr in blocks:
        raw = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<BB", gi, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def loads(data: bytes, source: str = "<bytes>") -> ModelWeights:
    if len(data) < _HEADER.size + 4:
        raise WeightsFormatError(f"{source}: truncated ({len(data)} bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    magic, version, arch, step, seed, n_blocks = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise WeightsFormatError(f"{source}: not a weight file (bad magic)")
    if zlib.crc32(body) != crc:
        raise WeightsFormatError(f"{source}: checksum failure (file truncated or corrupted)")
    if version != VERSION:
        raise WeightsFormatError(f"{source}: format version {version}, expected {VERSION}")
    if arch != architecture_hash():
        raise WeightsFormatError(f"{source}: architecture hash mismatch")
    groups = {g: {} for g in GROUPS}
    off = _HEADER.size
    try:
        for _ in range(n_blocks):
            (n,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off : off + n].decode()
            off += n
            gi, ndim = struct.unpack_from("<BB", body, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
            groups[GROUPS[gi]][name] = arr.astype(np.float32)
    except (struct.error, ValueError, IndexError) as exc:
        raise WeightsFormatError(f"{source}: malformed block table ({exc})") from None
    if off != len(body):
        raise WeightsFormatError(f"{source}: {len(body) - off} trailing bytes")
    return ModelWeights(groups["params"], groups["buffers"], groups["adam_m"], groups["adam_v"], int(step), int(seed))


def save_weights(weights: ModelWeights, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(weights))
    os.replace(tmp, path)


def load_weights(path) -> ModelWeights:
    path = Path(path)
    return loads(path.read_bytes(), str(path))


def header(path) -> dict:
    """Header fields of a weight file, for inspection."""
    data = Path(path).read_bytes()
    magic, version, arch, step, seed, n_blocks = _HEADER.unpack_from(data)
    return {
        "magic": magic.rstrip(b"\x00").decode(errors="replace"),
        "version": version,
        "architecture": arch.hex(),
        "step": step,
        "seed": seed,
        "blocks": n_blocks,
        "bytes": len(data),
        "crc_ok": zlib.crc32(data[:-4]) == struct.unpack("<I", data[-4:])[0],
    }

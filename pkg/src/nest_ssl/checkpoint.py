"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"NESTCKPT"                 magic, 8 bytes
    u32 version                 currently 1
    u32 tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8 rank, rank x u32 dims
        float32 payload, row-major
    u64 step
    4 x u64 RNG state
    u32 CRC32 of every preceding byte

64-bit scalars that must survive the float32-only tensor section (quantizer
seed, config hash) are stored as rank-1 tensors of four 16-bit limbs, which
float32 represents exactly.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ChecksumMismatch, CheckpointError, VersionMismatch

MAGIC = b"NESTCKPT"
VERSION = 1


@dataclass
class CheckpointData:
    tensors: dict[str, np.ndarray]
    step: int
    rng_state: tuple[int, int, int, int]
    crc_ok: bool = True


def u64_to_limbs(value: int) -> np.ndarray:
    return np.array([(value >> (16 * i)) & 0xFFFF for i in range(4)], dtype=np.float32)


def limbs_to_u64(limbs) -> int:
    return sum(int(v) << (16 * i) for i, v in enumerate(np.asarray(limbs).astype(np.int64)))


def encode(tensors: Mapping[str, np.ndarray], step: int, rng_state) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    parts.append(struct.pack("<Q", step))
    parts.append(struct.pack("<4Q", *rng_state))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes, verify: bool = True) -> CheckpointData:
    if len(blob) < 8 + 8 + 8 + 32 + 4:
        raise ChecksumMismatch("checkpoint truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    crc_ok = zlib.crc32(body) == crc
    if verify and not crc_ok:
        raise ChecksumMismatch("CRC32 mismatch (corrupt or truncated checkpoint)")
    if body[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", body, 8)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    off = 16
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off: off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", body, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(body, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            tensors[name] = arr.astype(np.float32)
        (step,) = struct.unpack_from("<Q", body, off)
        rng_state = struct.unpack_from("<4Q", body, off + 8)
        off += 40
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if off != len(body):
        raise CheckpointError(f"{len(body) - off} trailing bytes before CRC")
    return CheckpointData(tensors, step, tuple(rng_state), crc_ok)


def write(path, tensors: Mapping[str, np.ndarray], step: int, rng_state) -> Path:
    path = Path(path)
    path.write_bytes(encode(tensors, step, rng_state))
    return path


def read(path, verify: bool = True) -> CheckpointData:
    return decode(Path(path).read_bytes(), verify=verify)


def inspect(path) -> dict:
    """Walk a checkpoint without failing on a CRC mismatch."""
    data = read(path, verify=False)
    return {
        "path": str(path),
        "step": data.step,
        "crc_ok": data.crc_ok,
        "rng_state": list(data.rng_state),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in data.tensors.items()],
    }

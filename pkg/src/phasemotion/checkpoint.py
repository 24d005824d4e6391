"""Versioned binary checkpoint container.

Layout (all integers little-endian, all floats little-endian fp64):

    offset  size  field
    0       8     magic b"PHMCKPT\\x01"
    8       4     u32 header length H
    12      H     UTF-8 JSON header:
                    {"format_version": 1,
                     "config": {...},          # model/run configuration
                     "config_digest": "<sha256 hex of canonical config JSON>"}
    then    4     u32 parameter count P
    then          P parameter blobs, sorted by name
    then    4     u32 statistics count S
    then          S statistics blobs, sorted by name

Each blob:
    u16 name length, UTF-8 name, u8 ndim, u32 dims[ndim], fp64 payload
    (row-major, dims product values)

Round trips are lossless: fp64 payloads are written bit-exact.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"PHMCKPT\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def arrays_digest(arrays: dict[str, np.ndarray]) -> str:
    """Digest over named fp64 arrays; used to chain checkpoints together."""
    h = hashlib.sha256()
    for name in sorted(arrays.keys()):
        a = np.ascontiguousarray(arrays[name], dtype=np.float64)
        h.update(name.encode("utf-8"))
        h.update(str(a.shape).encode("utf-8"))
        h.update(a.astype("<f8").tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    stats: dict[str, np.ndarray]

    @property
    def digest(self) -> str:
        return config_digest(self.config)


def _write_blob(parts: list[bytes], name: str, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype=np.float64)
    name_b = name.encode("utf-8")
    parts.append(struct.pack("<H", len(name_b)))
    parts.append(name_b)
    parts.append(struct.pack("<B", a.ndim))
    parts.append(struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b"")
    parts.append(a.astype("<f8").tobytes())


def _read_blob(buf: bytes, off: int) -> tuple[str, np.ndarray, int]:
    (nlen,) = struct.unpack_from("<H", buf, off)
    off += 2
    name = buf[off:off + nlen].decode("utf-8")
    off += nlen
    (ndim,) = struct.unpack_from("<B", buf, off)
    off += 1
    shape = struct.unpack_from(f"<{ndim}I", buf, off) if ndim else ()
    off += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    array = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape)
    off += 8 * count
    return name, np.array(array, dtype=np.float64), off


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config,
        "config_digest": config_digest(ckpt.config),
    }
    header_b = json.dumps(header, sort_keys=True).encode("utf-8")
    parts: list[bytes] = [MAGIC, struct.pack("<I", len(header_b)), header_b]
    parts.append(struct.pack("<I", len(ckpt.params)))
    for name in sorted(ckpt.params.keys()):
        _write_blob(parts, name, ckpt.params[name])
    parts.append(struct.pack("<I", len(ckpt.stats)))
    for name in sorted(ckpt.stats.keys()):
        _write_blob(parts, name, ckpt.stats[name])
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    (hlen,) = struct.unpack_from("<I", buf, 8)
    header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version in {path}")
    config = header["config"]
    if header.get("config_digest") != config_digest(config):
        raise CheckpointError(f"config digest mismatch in {path}")
    off = 12 + hlen
    out: list[dict[str, np.ndarray]] = []
    for _ in range(2):
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        section: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, array, off = _read_blob(buf, off)
            section[name] = array
        out.append(section)
    return Checkpoint(config=config, params=out[0], stats=out[1])

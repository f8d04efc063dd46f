"""Single-file checkpoint container.

Byte layout (all integers little-endian)::

    magic        8 bytes   b"VCCKPT\\r\\n"
    version      u32       FORMAT_VERSION
    config_len   u64       then config_len bytes of UTF-8 JSON
    n_tensors    u32
      name_len   u16       then name_len bytes of UTF-8 name
      ndim       u8        then ndim x u32 dims
      data       prod(dims) x float32
    history_len  u64       then history_len bytes of UTF-8 JSON
    crc32        u32       zlib.crc32 over every preceding byte

The config is decoded and handed to ``validate`` before any tensor bytes
are read, so an inconsistent architecture fails fast.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Callable

import numpy as np

MAGIC = b"VCCKPT\r\n"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    code = "checkpoint-error"


class NotACheckpoint(CheckpointError):
    code = "not-a-checkpoint"


class CheckpointVersionError(CheckpointError):
    code = "version-mismatch"


class TruncatedCheckpoint(CheckpointError):
    code = "truncated"


class CorruptCheckpoint(CheckpointError):
    code = "corrupt"


class CheckpointValidationError(CheckpointError):
    code = "invalid-config"


def write_checkpoint(path, config: dict, tensors: dict[str, np.ndarray], history) -> Path:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    cfg = json.dumps(config, sort_keys=True).encode()
    parts += [struct.pack("<Q", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    hist = json.dumps(history, sort_keys=True).encode()
    parts += [struct.pack("<Q", len(hist)), hist]
    body = b"".join(parts)
    path = Path(path)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpoint(f"needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path, validate: Callable[[dict], None] | None = None):
    """Return ``(config, tensors, history)``; tensors come back as float32 arrays."""
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise NotACheckpoint(f"{path}: bad magic bytes")
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format {version}, expected {FORMAT_VERSION}")
    (clen,) = r.unpack("<Q")
    try:
        config = json.loads(r.take(clen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"config block unreadable: {exc}") from exc
    if validate is not None:
        try:
            validate(config)
        except CheckpointError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise CheckpointValidationError(str(exc)) from exc
    try:
        (n,) = r.unpack("<I")
        tensors = {}
        for _ in range(n):
            (nlen,) = r.unpack("<H")
            name = r.take(nlen).decode()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I") if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
        (hlen,) = r.unpack("<Q")
        history = json.loads(r.take(hlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        raise CorruptCheckpoint(f"malformed tensor or history block: {exc}") from exc
    (crc,) = r.unpack("<I")
    if crc != zlib.crc32(buf[:r.pos - 4]):
        raise CorruptCheckpoint("checksum mismatch")
    return config, tensors, history

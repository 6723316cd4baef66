"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"EMRF"  u16 version  u32 len  <config JSON, UTF-8>
    u32 count
    count x { u16 len <name>  u8 dtype  u8 rank  rank x u32 dim  <raw values> }
    u64 checksum   (BLAKE2b, 8-byte digest, over every preceding byte)
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams
from .tensor import Tensor

MAGIC = b"EMRF"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_TAGS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["depths"], d["heads"] = list(cfg.depths), list(cfg.heads)
    return d


def encode(cfg: ModelConfig, params: ModelParams) -> bytes:
    doc = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<HI", VERSION, len(doc)), doc, struct.pack("<I", len(params))]
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data)
        tag = DTYPE_TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"parameter {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", tag, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype(DTYPES[tag], copy=False).tobytes())
    body = b"".join(out)
    return body + checksum(body)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated record: {what} needs {n} bytes at offset {self.pos}, "
                                  f"{len(self.buf) - self.pos} remain ({self.path})")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes, path=None) -> tuple[ModelConfig, ModelParams]:
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r} ({path})")
    if len(buf) < 4 + 6 + 8:
        raise CheckpointError(f"truncated record: file too short ({path})")
    body, tail = buf[:-8], buf[-8:]
    r = _Reader(body, path)
    r.take(4, "magic")
    version, doc_len = r.unpack("<HI", "header")
    if version != VERSION:
        raise CheckpointError(f"version mismatch: file has {version}, reader supports {VERSION} ({path})")
    if checksum(body) != tail:
        raise CheckpointError(f"checksum mismatch ({path})")
    try:
        cfg = ModelConfig(**json.loads(r.take(doc_len, "config").decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"invalid embedded config: {exc} ({path})") from exc
    (count,) = r.unpack("<I", "record count")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        tag, rank = r.unpack("<BB", f"{name} header")
        if tag not in DTYPES:
            raise CheckpointError(f"record {name!r}: unknown dtype tag {tag} ({path})")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        dt = DTYPES[tag]
        raw = r.take(int(np.prod(dims, dtype=np.int64)) * dt.itemsize, f"{name} payload")
        arr = np.frombuffer(raw, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        tensors[name] = Tensor(arr, requires_grad=True, name=name)
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} trailing bytes after the last record ({path})")
    return cfg, ModelParams(cfg, tensors)


def save_checkpoint(path, cfg: ModelConfig, params: ModelParams) -> None:
    path = Path(path)
    data = encode(cfg, params)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc.strerror}") from exc


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return decode(buf, path)

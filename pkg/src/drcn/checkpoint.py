"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DRCN"                      magic
    u32                          format version
    u32 + bytes                  canonical JSON header (config, epoch, seed, optimizer scalars, extra)
    u32                          tensor count
    per tensor:
        u16 + bytes              utf-8 name
        u8 + u32 * ndim          shape
        f64 * prod(shape)        values, C order
    u64                          blake2b-64 digest of every preceding byte

Tensor order: model parameters in declaration order, BN running statistics,
then Adam first and second moments (``adam.m.<param>``, ``adam.v.<param>``).
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    CheckpointError,
    TruncatedFileError,
    VersionMismatchError,
)
from .model import Model, ModelConfig
from .optim import AdamState

MAGIC = b"DRCN"
VERSION = 1
_F64 = np.dtype("<f8")


@dataclass
class CheckpointInfo:
    epoch: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def _named_tensors(model: Model, opt: AdamState | None):
    out = [(name, layer.params[key]) for name, layer, key in model.named_parameters()]
    out += [(name, layer.buffers[key]) for name, layer, key in model.named_buffers()]
    if opt is not None:
        names = [name for name, _, _ in model.named_parameters()]
        for moment, store in (("m", opt.m), ("v", opt.v)):
            for name in names:
                if name in store:
                    out.append((f"adam.{moment}.{name}", store[name]))
    return out


def dumps(model: Model, optimizer: AdamState | None = None, epoch: int = 0, seed: int = 0,
          extra: dict | None = None) -> bytes:
    header = {
        "config": model.config.to_dict(),
        "epoch": int(epoch),
        "seed": int(seed),
        "extra": extra or {},
        "optimizer": None if optimizer is None else {
            "beta1": optimizer.beta1, "beta2": optimizer.beta2,
            "eps": optimizer.eps, "t": optimizer.t,
        },
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = _named_tensors(model, optimizer)
    parts = [MAGIC, struct.pack("<II", VERSION, len(header_bytes)), header_bytes,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_F64).tobytes())
    body = b"".join(parts)
    return body + _digest(body)


def save_checkpoint(model: Model, optimizer: AdamState | None, path, epoch: int = 0, seed: int = 0,
                    extra: dict | None = None):
    data = dumps(model, optimizer, epoch, seed, extra)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"checkpoint truncated while reading {what}: need {n} bytes at offset "
                f"{self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes):
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"not a drcn checkpoint: expected magic {MAGIC!r}, found {magic!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, this build reads {VERSION}")
    (hlen,) = r.unpack("<I", "header length")
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "tensor name length")
        name = r.take(nlen, "tensor name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        size = int(np.prod(shape, dtype=np.int64))
        raw = r.take(size * 8, f"values of {name}")
        tensors[name] = np.frombuffer(raw, dtype=_F64).reshape(shape).astype(np.float64)
    body_end = r.pos
    stored = r.take(8, "checksum")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} unexpected trailing bytes after checksum")
    if stored != _digest(data[:body_end]):
        raise ChecksumError("checkpoint checksum mismatch; file is corrupt")
    return header, tensors


def load_checkpoint(path):
    """Return ``(model, optimizer_state_or_None, CheckpointInfo)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    header, tensors = loads(data)
    model = Model(ModelConfig.from_dict(header["config"]))

    def fill(name, target):
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        src = tensors.pop(name)
        if src.shape != target.shape:
            raise CheckpointError(f"tensor {name!r} has shape {src.shape}, model expects {target.shape}")
        target[...] = src

    names = []
    for name, layer, key in model.named_parameters():
        fill(name, layer.params[key])
        names.append(name)
    for name, layer, key in model.named_buffers():
        fill(name, layer.buffers[key])

    opt = None
    if header.get("optimizer") is not None:
        o = header["optimizer"]
        opt = AdamState(o["beta1"], o["beta2"], o["eps"], o["t"])
        for moment, store in (("m", opt.m), ("v", opt.v)):
            for name in names:
                key = f"adam.{moment}.{name}"
                if key in tensors:
                    store[name] = tensors.pop(key)
    if tensors:
        raise CheckpointError(f"checkpoint has unexpected tensors: {sorted(tensors)[:5]}")
    info = CheckpointInfo(header.get("epoch", 0), header.get("seed", 0), header.get("extra", {}))
    return model, opt, info

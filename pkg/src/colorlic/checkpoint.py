"""Checkpoint container (magic ``CLCKPT01``).

Layout, all integers little-endian::

    magic "CLCKPT01" (8 bytes)
    u32 header_len, header_len bytes of UTF-8 JSON
        {"config": {...}, "meta": {...}, "scale_table": [...], "format": 1}
    u32 tensor_count
    tensor_count x [u16 name_len | name | u8 ndim | ndim x u32 dims | float32 data]
    u8 has_adam
    if has_adam:
        f64 lr | f64 beta1 | f64 beta2 | f64 epsilon | u64 step
        tensor_count x float32 m (parameter order) then tensor_count x float32 v
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .entropy import default_scale_table
from .errors import FormatError, UsageError
from .model import ModelConfig, ModelParams
from .optim import AdamState
from .tensor import Parameter

MAGIC = b"CLCKPT01"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState | None = None
    meta: dict = field(default_factory=dict)
    scale_table: np.ndarray = field(default_factory=default_scale_table)


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "format": FORMAT_VERSION,
        "config": ckpt.params.config.to_dict(),
        "meta": ckpt.meta,
        "scale_table": [float(s) for s in ckpt.scale_table],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(blob)), blob, struct.pack("<I", len(ckpt.params))]
    for name, p in ckpt.params.items():
        enc = name.encode()
        parts.append(struct.pack("<H", len(enc)) + enc + struct.pack("<B", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(_f32(p.data))
    adam = ckpt.adam
    parts.append(struct.pack("<B", adam is not None))
    if adam is not None:
        parts.append(struct.pack("<ddddQ", adam.lr, adam.beta1, adam.beta2, adam.epsilon, adam.step))
        for moments in (adam.m, adam.v):
            for name, p in ckpt.params.items():
                arr = moments.get(name)
                parts.append(_f32(arr if arr is not None else np.zeros(p.shape)))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode())
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format {header.get('format')}")
    (count,) = r.unpack("<I")
    tensors: OrderedDict[str, Parameter] = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        tensors[name] = Parameter(r.floats(shape), name)
    params = ModelParams(config, tensors)
    expected = ModelParams.init(config, 0)
    if params.names() != expected.names() or any(params[k].shape != expected[k].shape for k in params):
        raise FormatError("checkpoint tensors do not match its model config")
    (has_adam,) = r.unpack("<B")
    adam = None
    if has_adam:
        lr, b1, b2, eps, step = r.unpack("<ddddQ")
        m = {k: r.floats(p.shape) for k, p in params.items()}
        v = {k: r.floats(p.shape) for k, p in params.items()}
        adam = AdamState(lr=lr, beta1=b1, beta2=b2, epsilon=eps, step=step, m=m, v=v)
    if r.pos != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    return Checkpoint(params, adam, header.get("meta", {}), np.asarray(header["scale_table"], dtype=np.float64))


def save(path, ckpt: Checkpoint) -> None:
    atomic_write(path, to_bytes(ckpt))


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())

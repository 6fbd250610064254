"""Binary weight files: magic, version, JSON config (with optional vocabulary), then named float64 tensors."""
from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from typing import BinaryIO, Optional, Union

import numpy as np

from . import autograd as ag
from .models import ModelConfig, SegModel, _shapes
from ..ingest import Vocab

MAGIC = b"TBXW"
VERSION = 1


class WeightFileError(ValueError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def dumps_weights(model: SegModel) -> bytes:
    parts = [MAGIC, _u32(VERSION)]
    meta = {"model": model.cfg.to_dict(), "vocab": model.vocab.dumps() if model.vocab else None}
    cfg = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts += [_u32(len(cfg)), cfg, _u32(len(model.params))]
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        parts += [_u32(len(raw)), raw, _u32(p.data.ndim)]
        parts += [_u32(d) for d in p.data.shape]
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightFileError("truncated weight file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def loads_weights(buf: bytes, expect_variant: Optional[str] = None) -> SegModel:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise WeightFileError("not a weight file")
    version = r.u32()
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
        cfg = ModelConfig.from_dict(meta["model"])
        vocab = Vocab.loads(meta["vocab"]) if meta.get("vocab") else None
    except (TypeError, ValueError, KeyError) as e:
        raise WeightFileError(f"bad config block: {e}") from e
    if expect_variant is not None and cfg.variant != expect_variant.upper():
        raise WeightFileError(f"weight file holds {cfg.variant}, expected {expect_variant.upper()}")
    expected = {k: v[0] for k, v in _shapes(cfg).items()}
    n = r.u32()
    params: "OrderedDict[str, ag.Tensor]" = OrderedDict()
    for _ in range(n):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        if expected.get(name) != shape:
            raise WeightFileError(f"unexpected tensor {name} with shape {shape}")
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = ag.parameter(data)
    if r.pos != len(buf):
        raise WeightFileError("trailing bytes after last tensor")
    if set(params) != set(expected):
        raise WeightFileError("weight file is missing tensors")
    return SegModel(cfg, OrderedDict((k, params[k]) for k in expected), vocab)


def save_weights(model: SegModel, sink: Union[str, os.PathLike, BinaryIO]) -> None:
    data = dumps_weights(model)
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        with open(sink, "wb") as f:
            f.write(data)


def load_weights(source: Union[str, os.PathLike, BinaryIO], expect_variant: Optional[str] = None) -> SegModel:
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as f:
            data = f.read()
    return loads_weights(data, expect_variant)

"""Binary checkpoint files.

Layout: magic `TRNK`, version u16, header length u32, UTF-8 JSON header
(model spec, epoch, metrics snapshot, parameter directory with name,
dims and byte offset), then the parameter tensors as contiguous f32
little-endian payloads in directory order. When optimizer state is
present, first-moment then second-moment tensors follow in the same
order. Parameters round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..store import atomic_write
from .model import ModelSpec, parameter_shapes
from .optim import AdamState

MAGIC = b"TRNK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict
    epoch: int = 0
    metrics_snapshot: dict | None = None
    optimizer_state: AdamState | None = None


def _directory(spec: ModelSpec) -> list:
    entries = []
    offset = 0
    for name, shape in parameter_shapes(spec):
        entries.append({"name": name, "shape": list(shape), "offset": offset})
        offset += int(np.prod(shape)) * 4
    return entries


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    directory = _directory(ckpt.spec)
    header = {
        "spec": ckpt.spec.to_json(),
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics_snapshot,
        "params": directory,
        "optimizer": ({"t": ckpt.optimizer_state.t}
                      if ckpt.optimizer_state is not None else None),
    }
    header_bytes = json.dumps(header).encode("utf-8")
    chunks = [_PREFIX.pack(MAGIC, VERSION, len(header_bytes)), header_bytes]
    order = [e["name"] for e in directory]
    for name in order:
        chunks.append(np.ascontiguousarray(ckpt.params[name], dtype="<f4").tobytes())
    if ckpt.optimizer_state is not None:
        for moments in (ckpt.optimizer_state.m, ckpt.optimizer_state.v):
            for name in order:
                chunks.append(np.ascontiguousarray(moments[name], dtype="<f4").tobytes())
    atomic_write(path, b"".join(chunks))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _PREFIX.size:
        raise ValidationError(f"{path}: truncated checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    header = json.loads(data[_PREFIX.size:_PREFIX.size + header_len])
    spec = ModelSpec.from_json(header["spec"])
    expected = {name: tuple(shape) for name, shape in parameter_shapes(spec)}

    payload = data[_PREFIX.size + header_len:]
    params = {}
    total = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        if expected.get(entry["name"]) != shape:
            raise ValidationError(
                f"{path}: parameter {entry['name']!r} does not match the spec")
        n = int(np.prod(shape)) * 4
        raw = payload[entry["offset"]:entry["offset"] + n]
        if len(raw) != n:
            raise ValidationError(f"{path}: truncated tensor {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        total += n

    opt_state = None
    if header.get("optimizer") is not None:
        opt_state = AdamState(t=int(header["optimizer"]["t"]))
        cursor = total
        for moments in (opt_state.m, opt_state.v):
            for entry in header["params"]:
                shape = tuple(entry["shape"])
                n = int(np.prod(shape)) * 4
                raw = payload[cursor:cursor + n]
                if len(raw) != n:
                    raise ValidationError(f"{path}: truncated optimizer state")
                moments[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
                cursor += n
    return Checkpoint(spec=spec, params=params, epoch=int(header["epoch"]),
                      metrics_snapshot=header.get("metrics"),
                      optimizer_state=opt_state)

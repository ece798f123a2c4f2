"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"DFUN" | u32 version (=1) | u64 header length | UTF-8 JSON header | payload

The header carries the network spec, an ordered tensor index
(name, shape, byte offset, byte length) and flags. The payload is the
concatenation of float32 little-endian tensors in index order, no padding.
Serialization is canonical: equal content gives identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .netzoo import NetworkSpec
from .optim import AdamState
from .tensor import DTYPE

MAGIC = b"DFUN"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")

_M, _V, _EXTRA = "adam.m/", "adam.v/", "extra/"


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class HeaderInconsistencyError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: Dict[str, np.ndarray]
    optimizer: Optional[AdamState] = None
    #: auxiliary arrays stored alongside the weights (e.g. normaliser images)
    extras: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _tensor_order(ckpt: Checkpoint):
    names = list(ckpt.spec.param_shapes())
    missing = set(names) ^ set(ckpt.params)
    if missing:
        raise HeaderInconsistencyError(f"parameters do not match the network layout: {sorted(missing)}")
    items = [(n, ckpt.params[n]) for n in names]
    if ckpt.optimizer is not None and ckpt.optimizer.m:
        items += [(_M + n, ckpt.optimizer.m[n]) for n in names]
        items += [(_V + n, ckpt.optimizer.v[n]) for n in names]
    items += [(_EXTRA + n, ckpt.extras[n]) for n in sorted(ckpt.extras)]
    return items


def dumps(ckpt: Checkpoint) -> bytes:
    index, blobs, offset = [], [], 0
    for name, arr in _tensor_order(ckpt):
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "length": len(data)})
        blobs.append(data)
        offset += len(data)
    opt = None
    if ckpt.optimizer is not None:
        o = ckpt.optimizer
        opt = {"t": o.t, "beta1": o.beta1, "beta2": o.beta2, "epsilon": o.epsilon}
    header = {
        "spec": ckpt.spec.to_dict(),
        "tensors": index,
        "flags": {"optimizer": ckpt.optimizer is not None, "dtype": "float32-le"},
        "optimizer": opt,
        "meta": ckpt.meta,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(raw)) + raw + b"".join(blobs)


def loads(data: bytes) -> Checkpoint:
    if len(data) < _PREFIX.size:
        if data[:4] != MAGIC[:len(data[:4])]:
            raise BadMagicError("not a checkpoint file")
        raise TruncatedPayloadError("file ends inside the fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {version}")
    body = _PREFIX.size + hlen
    if len(data) < body:
        raise TruncatedPayloadError("file ends inside the header")
    try:
        header = json.loads(data[_PREFIX.size:body].decode("utf-8"))
        spec = NetworkSpec.from_dict(header["spec"])
        index = header["tensors"]
        flags = header["flags"]
    except (ValueError, KeyError, TypeError) as exc:
        raise HeaderInconsistencyError(f"malformed header: {exc}") from None
    payload = memoryview(data)[body:]
    tensors: Dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in index:
        name, shape = entry["name"], tuple(entry["shape"])
        off, length = entry["offset"], entry["length"]
        if off != expected_offset or length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise HeaderInconsistencyError(f"index entry for {name} is inconsistent")
        if name in tensors:
            raise HeaderInconsistencyError(f"duplicate tensor {name}")
        if off + length > len(payload):
            raise TruncatedPayloadError(f"payload ends inside tensor {name}")
        tensors[name] = np.frombuffer(payload[off:off + length], dtype="<f4").astype(DTYPE).reshape(shape)
        expected_offset = off + length
    if expected_offset != len(payload):
        raise HeaderInconsistencyError(f"{len(payload) - expected_offset} trailing payload bytes")

    shapes = spec.param_shapes()
    params = {}
    for name, shape in shapes.items():
        if name not in tensors:
            raise HeaderInconsistencyError(f"missing parameter {name}")
        if tensors[name].shape != tuple(shape):
            raise HeaderInconsistencyError(f"parameter {name} has shape {tensors[name].shape}, spec says {shape}")
        params[name] = tensors[name]
    optimizer = None
    if flags.get("optimizer"):
        o = header.get("optimizer") or {}
        optimizer = AdamState(o.get("beta1", 0.9), o.get("beta2", 0.999), o.get("epsilon", 1e-8), int(o.get("t", 0)))
        for name in shapes:
            if _M + name in tensors:
                optimizer.m[name] = tensors[_M + name]
                optimizer.v[name] = tensors[_V + name]
    extras = {k[len(_EXTRA):]: v for k, v in tensors.items() if k.startswith(_EXTRA)}
    return Checkpoint(spec, params, optimizer, extras, header.get("meta") or {})


def save_checkpoint(path, spec: NetworkSpec, params, optimizer: Optional[AdamState] = None,
                    extras: Optional[Dict[str, np.ndarray]] = None, meta: Optional[dict] = None) -> None:
    data = dumps(Checkpoint(spec, params, optimizer, extras or {}, meta or {}))
    with open(os.fspath(path), "wb") as fh:
        fh.write(data)


def load_checkpoint(path) -> Checkpoint:
    with open(os.fspath(path), "rb") as fh:
        return loads(fh.read())

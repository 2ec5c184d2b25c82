"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"PCGSSLCK"
    version    u32       1
    meta_len   u32       length of the JSON metadata block
    meta       bytes     UTF-8 JSON: {"backbone": {...}, "frozen": [...], "extra": {...}}
    n_entries  u32
    entry*     u16 path_len | path (UTF-8) | 2-byte dtype code ("f4"/"f8")
               | u8 ndim | ndim x u64 shape | raw little-endian data

Files are written to a temporary sibling and renamed into place.
"""
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .model import BackboneConfig, ParameterSet
from .tensor import Tensor

MAGIC = b"PCGSSLCK"
VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


def _code(dtype):
    for code, dt in _DTYPES.items():
        if np.dtype(dtype) == dt.newbyteorder("="):
            return code
    raise CheckpointError(f"unsupported dtype {dtype}")


def save_checkpoint(path, params, backbone_cfg=None, extra=None):
    path = Path(path)
    meta = {
        "backbone": backbone_cfg.to_dict() if backbone_cfg is not None else None,
        "frozen": sorted(params.frozen_paths),
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(params))]
    for name in sorted(params.tensors):
        arr = params[name].data
        code = _code(arr.dtype)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded + code.encode("ascii"))
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    tmp = path.with_name(path.name + ".tmp")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Return ``(params, backbone_cfg or None, extra)``; shapes are checked against the config."""
    r = _Reader(Path(path).read_bytes())
    if r.take(8) != MAGIC:
        raise CheckpointError(f"{path}: not a pcgssl checkpoint")
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (n_entries,) = r.unpack("<I")
    params = ParameterSet()
    for _ in range(n_entries):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code = r.take(2).decode("ascii")
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code!r}")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        dt = _DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        params[name] = Tensor(arr, requires_grad=True)
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: trailing bytes after last entry")
    params.freeze(meta.get("frozen", []))
    cfg = BackboneConfig(**meta["backbone"]) if meta.get("backbone") else None
    if cfg is not None:
        _validate_backbone(params, cfg, path)
    return params, cfg, meta.get("extra", {})


def _validate_backbone(params, cfg, path):
    c_in = 1
    for i, c_out in enumerate(cfg.channels, start=1):
        expect = {f"block{i}.conv.weight": (c_out, c_in, cfg.kernel), f"block{i}.conv.bias": (c_out,)}
        for name, shape in expect.items():
            if name not in params:
                raise CheckpointError(f"{path}: missing {name}")
            if params[name].shape != shape:
                raise CheckpointError(f"{path}: {name} has shape {params[name].shape}, expected {shape}")
        c_in = c_out

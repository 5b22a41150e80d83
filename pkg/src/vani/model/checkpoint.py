"""Checkpoint file.

Layout (little endian)::

    b"VANIMDL" | u32 version | u32 header_len | header JSON (utf-8)
    u32 n_tensors
    per tensor: u16 name_len | name | u8 ndim | u32 dims[ndim] | f32 data (row-major)

The header carries the model config, the symbol/speaker/accent inventories
and the optimizer step. Adam moments are stored as tensors named
``adam.m.<param>`` and ``adam.v.<param>``.
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from vani.model.config import ModelConfig, ModelError
from vani.model.network import VaniModel

MAGIC = b"VANIMDL"
VERSION = 1


def _write_tensor(buf, name: str, value: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(value, dtype="<f4")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def save_checkpoint(path, model: VaniModel, optimizer: Optional[dict] = None) -> None:
    """Write ``model`` (and optionally the Adam state) atomically."""
    header = {
        "config": json.loads(model.cfg.to_json()),
        "symbols": list(model.symbols),
        "speakers": list(model.speakers),
        "accents": list(model.accents),
        "step": int(optimizer["step"]) if optimizer else 0,
    }
    tensors = list(model.params.items())
    if optimizer:
        tensors += [(f"adam.m.{k}", v) for k, v in optimizer["m"].items()]
        tensors += [(f"adam.v.{k}", v) for k, v in optimizer["v"].items()]
    buf = io.BytesIO()
    head = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(head)))
    buf.write(head)
    buf.write(struct.pack("<I", len(tensors)))
    for name, value in tensors:
        _write_tensor(buf, name, value)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple:
    """Return ``(model, optimizer_state_or_None)``."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ModelError(f"{path}: not a model checkpoint")
    pos = len(MAGIC)
    version, head_len = struct.unpack_from("<II", raw, pos)
    if version != VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(raw[pos : pos + head_len].decode("utf-8"))
    pos += head_len
    (n_tensors,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    cfg = ModelConfig.from_dict(header["config"])
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        tensors[name] = arr.astype(cfg.np_dtype)
    if pos != len(raw):
        raise ModelError(f"{path}: {len(raw) - pos} trailing bytes")
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    model = VaniModel(cfg, params, header["symbols"], header["speakers"], header["accents"])
    optimizer = None
    if any(k.startswith("adam.") for k in tensors):
        optimizer = {
            "step": header["step"],
            "m": {k: tensors[f"adam.m.{k}"] for k in params},
            "v": {k: tensors[f"adam.v.{k}"] for k in params},
        }
    return model, optimizer

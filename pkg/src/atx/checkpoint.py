"""Versioned model checkpoints.

Layout: 8-byte magic, little-endian uint32 format version, uint64 header
length, a UTF-8 JSON header (architecture, epoch, metric snapshot, tensor
index), then every tensor as float32 little-endian row-major bytes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .models import ArchConfig, DenseNet, TapAdapter

MAGIC = b"ATXCKPT\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _adapter_info(model: DenseNet):
    if model.adapter is None:
        return None
    w = model.adapter.proj.weight
    return {"in_channels": w.shape[1], "out_channels": w.shape[0], "out_hw": list(model.adapter.out_hw)}


def save_checkpoint(path, model: DenseNet, epoch: int, metrics=None) -> Path:
    """Write atomically (temporary file then rename)."""
    path = Path(path)
    tensors, blobs, offset = [], [], 0
    for kind, items in (("param", model.named_parameters()), ("buffer", model.named_buffers())):
        for name, value in items:
            arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f4")
            tensors.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
            blobs.append(arr.tobytes())
            offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "arch_config": model.config.to_dict(),
        "adapter": _adapter_info(model),
        "epoch": int(epoch),
        "metrics": {k: (None if v is None or not np.isfinite(v) else float(v)) for k, v in (metrics or {}).items()},
        "tensors": tensors,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", FORMAT_VERSION, len(raw)))
            fh.write(raw)
            for b in blobs:
                fh.write(b)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_checkpoint(path):
    """Return ``(header, {name: float32 array})``."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=t["offset"])
        arrays[t["name"]] = arr.reshape(t["shape"]).astype(np.float32)
    return header, arrays


def load_checkpoint(path, model: DenseNet) -> dict:
    """Load weights into ``model`` after checking that its architecture matches; returns the header."""
    header, arrays = read_checkpoint(path)
    stored = ArchConfig.from_dict(header["arch_config"])
    if stored != model.config:
        raise CheckpointError(f"{path}: architecture mismatch\n  stored: {stored}\n  model:  {model.config}")
    if header.get("adapter") != _adapter_info(model):
        raise CheckpointError(f"{path}: tap adapter mismatch ({header.get('adapter')} vs {_adapter_info(model)})")
    model.load_state_dict(arrays)
    return header


def model_from_checkpoint(path) -> DenseNet:
    header, arrays = read_checkpoint(path)
    model = DenseNet(ArchConfig.from_dict(header["arch_config"]))
    info = header.get("adapter")
    if info is not None:
        model.adapter = TapAdapter(info["in_channels"], info["out_channels"], tuple(info["out_hw"]))
        model.add_module("adapter", model.adapter)
    model.load_state_dict(arrays)
    return model

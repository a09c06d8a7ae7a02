"""Versioned network checkpoints and parameter checksums.

File layout: ``b"SSRLCKPT"``, little-endian uint32 format version, uint32
header length, a UTF-8 JSON header, then the raw little-endian tensor bytes
in manifest order. The header holds the module kind, its constructor
config, free-form metadata and a manifest of ``name``, ``shape``, ``dtype``,
``offset`` and ``nbytes`` per tensor. Writes go to a temporary file that is
renamed into place.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import numpy as np
import torch
from torch import nn

MAGIC = b"SSRLCKPT"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.int64: "int64",
}
_NP = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(IOError):
    pass


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_torch_save(obj: Any, path: str | os.PathLike) -> None:
    buf = io.BytesIO()
    torch.save(obj, buf)
    atomic_write_bytes(path, buf.getvalue())


def encode_state(state: Mapping[str, torch.Tensor], kind: str, config: Mapping[str, Any],
                 meta: Optional[Mapping[str, Any]] = None) -> bytes:
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in state.items():
        t = tensor.detach().cpu()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        dtype = _DTYPES[t.dtype]
        raw = np.ascontiguousarray(t.numpy().astype(_NP[dtype], copy=False)).tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "dtype": dtype, "offset": offset,
                         "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"version": FORMAT_VERSION, "kind": kind, "config": dict(config),
                         "meta": dict(meta or {}), "tensors": manifest}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(blobs)


def decode_state(payload: bytes, source: str = "<bytes>") -> tuple[dict[str, torch.Tensor], dict]:
    if payload[:8] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    version, hlen = struct.unpack("<II", payload[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    header = json.loads(payload[16:16 + hlen].decode("utf-8"))
    body = payload[16 + hlen:]
    state = {}
    for entry in header["tensors"]:
        chunk = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise CheckpointError(f"{source}: truncated tensor {entry['name']}")
        arr = np.frombuffer(chunk, dtype=_NP[entry["dtype"]]).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    return state, header


def save_module(path: str | os.PathLike, module: nn.Module, kind: str,
                meta: Optional[Mapping[str, Any]] = None) -> None:
    config = getattr(module, "config", {})
    atomic_write_bytes(path, encode_state(module.state_dict(), kind, config, meta))


def read_checkpoint(path: str | os.PathLike) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_state(payload, str(path))


def load_module(path: str | os.PathLike, module: nn.Module) -> dict:
    state, header = read_checkpoint(path)
    ref = module.state_dict()
    for name, tensor in state.items():
        if name in ref:
            state[name] = tensor.to(ref[name].dtype)
    module.load_state_dict(state)
    return header


def named_tensors(module: nn.Module) -> Iterable[tuple[str, torch.Tensor]]:
    return sorted(module.state_dict().items())


def checksum(*modules: nn.Module) -> str:
    """SHA-256 over names and bytes of all parameters and buffers."""
    h = hashlib.sha256()
    for module in modules:
        for name, tensor in named_tensors(module):
            h.update(name.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()

"""Checkpoint archive: named raw tensors plus a JSON metadata record.

Container layout (``.mgck``):

    magic "MGCK\\x01\\n"
    u64 little-endian header length
    JSON header {"metadata": {...}, "tensors": [{name, dtype, shape, nbytes}]}
    tensor payload, raw little-endian bytes in header order
    sha256 digest of everything above (32 bytes)

Floats are stored as little-endian 32- or 64-bit values; the round trip is
bit-exact. The trailing digest catches truncation and corruption.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointCorruptError, CheckpointIncompatibleError

MAGIC = b"MGCK\x01\n"
EXTENSION = ".mgck"

_NP_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i64": np.dtype("<i8")}
_TORCH_TO_TAG = {torch.float32: "f32", torch.float64: "f64", torch.int64: "i64"}
_TAG_TO_TORCH = {"f32": torch.float32, "f64": torch.float64, "i64": torch.int64}


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor]
    metadata: dict = field(default_factory=dict)


def save_checkpoint(checkpoint: Checkpoint, path) -> Path:
    path = Path(path)
    index = []
    payload = bytearray()
    for name in sorted(checkpoint.tensors):
        tensor = checkpoint.tensors[name].detach().cpu().contiguous()
        tag = _TORCH_TO_TAG.get(tensor.dtype)
        if tag is None:
            raise CheckpointIncompatibleError(
                f"tensor '{name}' has unsupported dtype {tensor.dtype}"
            )
        raw = tensor.numpy().astype(_NP_DTYPES[tag], copy=False).tobytes()
        index.append(
            {"name": name, "dtype": tag, "shape": list(tensor.shape), "nbytes": len(raw)}
        )
        payload.extend(raw)

    header = json.dumps(
        {"metadata": checkpoint.metadata, "tensors": index}, sort_keys=True
    ).encode("utf-8")
    body = MAGIC + len(header).to_bytes(8, "little") + header + bytes(payload)
    blob = body + hashlib.sha256(body).digest()

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointCorruptError(f"cannot read checkpoint {path}: {exc}") from exc

    if len(blob) < len(MAGIC) + 8 + 32:
        raise CheckpointCorruptError(f"{path}: file too short to be a checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointCorruptError(f"{path}: integrity digest mismatch")
    if not body.startswith(MAGIC):
        raise CheckpointCorruptError(f"{path}: bad magic bytes")

    header_len = int.from_bytes(body[len(MAGIC) : len(MAGIC) + 8], "little")
    header_start = len(MAGIC) + 8
    try:
        header = json.loads(body[header_start : header_start + header_len])
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: malformed header") from exc

    tensors = {}
    offset = header_start + header_len
    for entry in header["tensors"]:
        raw = body[offset : offset + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointCorruptError(f"{path}: truncated tensor '{entry['name']}'")
        arr = np.frombuffer(raw, dtype=_NP_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy()).to(_TAG_TO_TORCH[entry["dtype"]])
        offset += entry["nbytes"]
    if offset != len(body):
        raise CheckpointCorruptError(f"{path}: trailing bytes after tensor payload")
    return Checkpoint(tensors=tensors, metadata=header["metadata"])


def module_tensors(module: torch.nn.Module, prefix: str) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{name}": value for name, value in module.state_dict().items()}


def load_module_tensors(module: torch.nn.Module, tensors: dict, prefix: str):
    """Load prefixed tensors into a module, validating names and shapes."""
    state = module.state_dict()
    selected = {}
    scope = prefix + "."
    stored = {name for name in tensors if name.startswith(scope)}
    for name, current in state.items():
        key = scope + name
        if key not in tensors:
            raise CheckpointIncompatibleError(f"checkpoint is missing tensor '{key}'")
        value = tensors[key]
        if tuple(value.shape) != tuple(current.shape):
            raise CheckpointIncompatibleError(
                f"tensor '{key}' has shape {tuple(value.shape)}, "
                f"expected {tuple(current.shape)}"
            )
        selected[name] = value.to(current.dtype)
        stored.discard(key)
    if stored:
        raise CheckpointIncompatibleError(
            f"checkpoint holds unexpected tensors: {sorted(stored)[:3]}"
        )
    module.load_state_dict(selected)


def optimizer_tensors(optimizer: torch.optim.Optimizer, prefix: str):
    """Split optimizer state into archive tensors and JSON-safe metadata."""
    state_dict = optimizer.state_dict()
    tensors = {}
    scalar_state = {}
    for pid, bucket in state_dict["state"].items():
        scalars = {}
        for key, value in bucket.items():
            if isinstance(value, torch.Tensor):
                tensors[f"{prefix}.state.{pid}.{key}"] = value
            else:
                scalars[key] = value
        scalar_state[str(pid)] = scalars
    meta = {"param_groups": state_dict["param_groups"], "scalar_state": scalar_state}
    return tensors, meta


def load_optimizer_state(optimizer: torch.optim.Optimizer, tensors: dict, meta: dict, prefix: str):
    scope = f"{prefix}.state."
    state: dict[int, dict] = {}
    for name, value in tensors.items():
        if not name.startswith(scope):
            continue
        pid_str, key = name[len(scope) :].split(".", 1)
        state.setdefault(int(pid_str), {})[key] = value.clone()
    for pid_str, scalars in meta.get("scalar_state", {}).items():
        state.setdefault(int(pid_str), {}).update(scalars)
    optimizer.load_state_dict({"state": state, "param_groups": meta["param_groups"]})

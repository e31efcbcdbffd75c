"""Single-file checkpoint container.

Layout: an ASCII magic tag, an 8-byte little-endian header length, a JSON
header (model config, training status, and a manifest of named blobs with
byte offsets), then the blobs themselves as little-endian 32-bit floats in
manifest order. Loading into a model verifies the stored config first.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig

MAGIC = b"PTSEGCKPT1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed files or configuration mismatches."""


def _canonical(config_dict: dict) -> str:
    """JSON with sorted keys; tuples and lists compare equal via this form."""
    return json.dumps(config_dict, sort_keys=True, default=list)


@dataclass
class Checkpoint:
    """In-memory view of a checkpoint file."""

    config: dict
    train: dict
    params: dict = field(default_factory=dict)  # name -> float32 ndarray
    optimizer: dict = field(default_factory=dict)  # name -> float32 ndarray

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.config)


def save_checkpoint(path, model, train: dict, optimizer=None) -> Path:
    """Write the model (and optional SGD momentum buffers) to ``path``."""
    path = Path(path)
    entries = []
    blobs = []
    offset = 0

    def add(name: str, tensor: torch.Tensor) -> None:
        nonlocal offset
        data = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        entries.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": data.nbytes}
        )
        blobs.append(data.tobytes())
        offset += data.nbytes

    for name, tensor in model.state_dict().items():
        add(name, tensor)

    opt_entries_start = len(entries)
    if optimizer is not None:
        by_param = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                buf = optimizer.state.get(p, {}).get("momentum_buffer")
                if buf is not None:
                    add(f"momentum/{by_param[id(p)]}", buf)

    header = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "train": dict(train),
        "params": entries[:opt_entries_start],
        "optimizer": entries[opt_entries_start:],
    }
    header_bytes = json.dumps(header, sort_keys=True, default=list).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path) -> Checkpoint:
    """Read and validate a checkpoint file into memory."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a recognized checkpoint file")
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    body_start = len(MAGIC) + 8
    if body_start + header_len > len(raw):
        raise CheckpointError(f"{path} is truncated (header extends past end of file)")
    try:
        header = json.loads(raw[body_start : body_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has an unreadable header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('version')!r} in {path}"
        )

    blob_start = body_start + header_len

    def extract(entries) -> dict:
        out = {}
        for entry in entries:
            lo = blob_start + entry["offset"]
            hi = lo + entry["nbytes"]
            if hi > len(raw):
                raise CheckpointError(f"{path} is truncated (blob {entry['name']!r})")
            arr = np.frombuffer(raw[lo:hi], dtype="<f4").reshape(entry["shape"]).copy()
            out[entry["name"]] = arr
        return out

    return Checkpoint(
        config=header["config"],
        train=header["train"],
        params=extract(header["params"]),
        optimizer=extract(header["optimizer"]),
    )


def apply_to_model(ckpt: Checkpoint, model) -> None:
    """Copy stored parameters into ``model`` after verifying its configuration."""
    stored = _canonical(ckpt.config)
    actual = _canonical(dataclasses.asdict(model.config))
    if stored != actual:
        raise CheckpointError(
            "checkpoint was written for a different model configuration; "
            "refusing to load"
        )
    state = model.state_dict()
    missing = sorted(set(state) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(state))
    if missing or extra:
        raise CheckpointError(
            f"parameter manifest mismatch: missing {missing[:3]}, unexpected {extra[:3]}"
        )
    with torch.no_grad():
        for name, tensor in state.items():
            arr = ckpt.params[name]
            if tuple(arr.shape) != tuple(tensor.shape):
                raise CheckpointError(
                    f"shape mismatch for {name!r}: file has {arr.shape}, model has {tuple(tensor.shape)}"
                )
            tensor.copy_(torch.from_numpy(arr).to(tensor.dtype))


def load_model(path):
    """Build a fresh network from the stored config and load its weights."""
    from .model import PTNet

    ckpt = load_checkpoint(path)
    model = PTNet(ckpt.model_config())
    apply_to_model(ckpt, model)
    return model, ckpt

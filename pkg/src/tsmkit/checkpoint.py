"""Bit-exact checkpoint serialization.

File layout (all integers little-endian):

    bytes 0-3    magic "TSMN"
    bytes 4-7    format version (u32)
    bytes 8-15   header length in bytes (u64)
    header       UTF-8 JSON: model config, training step, extra state,
                 and an array index of {name, shape, dtype, offset}
    blobs        raw float32 data, contiguous, in index order

Offsets are relative to the start of the blob section.  Discriminator
parameters use the "disc." name prefix, autoencoder parameters "ae.",
optimizer moments "optim.".
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import Autoencoder, ModelConfig

MAGIC = b"TSMN"
VERSION = 1

AE_PREFIX = "ae."
DISC_PREFIX = "disc."
OPTIM_PREFIX = "optim."


class CheckpointError(Exception):
    """The checkpoint file is malformed or inconsistent."""


@dataclass
class Checkpoint:
    """Model config plus named float32 arrays and training state."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]
    step: int = 0
    extra: dict = field(default_factory=dict)

    def select(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays under a name prefix, with the prefix stripped."""
        n = len(prefix)
        return {k[n:]: v for k, v in self.arrays.items() if k.startswith(prefix)}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    index = []
    offset = 0
    blobs = []
    for name, arr in ckpt.arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        data = arr.astype("<f4", copy=False).tobytes()
        index.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset}
        )
        blobs.append(data)
        offset += len(data)
    header = {
        "config": ckpt.config.to_dict(),
        "step": int(ckpt.step),
        "extra": ckpt.extra,
        "arrays": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(Path(path), "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for data in blobs:
            f.write(data)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a TSMN checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    if 16 + header_len > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc

    blob = raw[16 + header_len :]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        if entry["dtype"] != "float32":
            raise CheckpointError(f"{path}: unsupported dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated data for array {entry['name']}")
        arrays[entry["name"]] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape).copy()
        )

    config = ModelConfig.from_dict(header["config"])
    return Checkpoint(
        config=config,
        arrays=arrays,
        step=int(header.get("step", 0)),
        extra=header.get("extra", {}),
    )


def restore_autoencoder(ckpt: Checkpoint) -> Autoencoder:
    """Build an autoencoder from a checkpoint's embedded config and weights."""
    model = Autoencoder(ckpt.config)
    load_module_arrays(model, ckpt.arrays, AE_PREFIX)
    model.eval()
    return model


def load_autoencoder(path) -> Autoencoder:
    """Load a checkpoint file straight into a ready-to-use autoencoder."""
    return restore_autoencoder(load_checkpoint(path))


def module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    """Snapshot a module's state dict as prefixed float32 arrays."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[prefix + name] = tensor.detach().cpu().numpy().astype(np.float32, copy=True)
    return out


def load_module_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray], prefix: str) -> None:
    """Restore a module from prefixed arrays, refusing shape mismatches."""
    state = module.state_dict()
    picked = {}
    n = len(prefix)
    names = {k[n:] for k in arrays if k.startswith(prefix)}
    if names != set(state):
        missing = sorted(set(state) - names)[:3]
        extra = sorted(names - set(state))[:3]
        raise CheckpointError(
            f"parameter names do not match module (missing {missing}, unexpected {extra})"
        )
    for key, tensor in state.items():
        arr = arrays[prefix + key]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"shape mismatch for {prefix + key}: checkpoint {tuple(arr.shape)} "
                f"vs model {tuple(tensor.shape)}"
            )
        picked[key] = torch.from_numpy(arr)
    module.load_state_dict(picked)

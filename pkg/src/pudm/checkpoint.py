"""Versioned single-file checkpoints.

Layout: a magic line, one line of JSON header (format version, network
config, free-form metadata, tensor table), then every tensor as flat
little-endian float32 in table order.
"""
import hashlib
import json

import numpy as np
import torch

from .errors import CheckpointError
from .io import atomic_write
from .network import NetworkConfig, UpsampleDenoiser

MAGIC = b"PUDM-CHECKPOINT\n"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


def save_checkpoint(model, path, extra=None):
    tensors, blobs, offset = [], [], 0
    for name, value in model.state_dict().items():
        arr = value.detach().cpu().numpy().astype(_DTYPE)
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes(order="C"))
        offset += arr.size
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32-le",
        "network": model.config.to_dict(),
        "extra": extra or {},
        "tensors": tensors,
    }
    with atomic_write(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Return ``(model, config, extra)``; every tensor shape is checked against the config."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    nl = raw.find(b"\n", len(MAGIC))
    if nl < 0:
        raise CheckpointError(f"{path}: corrupt header")
    try:
        header = json.loads(raw[len(MAGIC):nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version!r} (expected {FORMAT_VERSION})")
    try:
        config = NetworkConfig.from_dict(header["network"])
        table = header["tensors"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    model = UpsampleDenoiser(config)
    expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    data = np.frombuffer(raw, dtype=_DTYPE, offset=nl + 1) if (len(raw) - nl - 1) % 4 == 0 else None
    if data is None:
        raise CheckpointError(f"{path}: truncated tensor data")
    state, seen = {}, set()
    for entry in table:
        name, shape, off = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        if shape != expected[name]:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {shape}, config implies {expected[name]}")
        size = int(np.prod(shape)) if shape else 1
        if off < 0 or off + size > data.size:
            raise CheckpointError(f"{path}: tensor {name!r} runs past the end of the data")
        state[name] = torch.from_numpy(data[off:off + size].reshape(shape).copy())
        seen.add(name)
    missing = sorted(set(expected) - seen)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing}")
    model.load_state_dict(state)
    return model, config, header.get("extra", {})


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

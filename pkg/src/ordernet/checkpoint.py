"""Binary checkpoint format.

Layout::

    b"ONET" | version byte 0x01 | uint32 LE header length | JSON header | payload

The JSON header holds ``format_version``, the model ``config`` and a
``tensors`` manifest of ``{name, shape, offset}`` entries; ``offset`` is
the byte offset into the payload, which is the concatenation of the
tensors as little-endian float32 in manifest order. Parameters are listed
first, then batch-norm running statistics (``<layer>.running_mean`` and
``<layer>.running_var``).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import ModelConfig, OrderNet

MAGIC = b"ONET"
FORMAT_VERSION = 1

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "checkpoint_bytes", "atomic_write_bytes"]


class CheckpointError(ValueError):
    pass


def _named_arrays(model: OrderNet) -> list[tuple[str, np.ndarray]]:
    items = [(name, p.data) for name, p in model.params.items()]
    for layer, state in model.bn.items():
        items.append((f"{layer}.running_mean", state.mean))
        items.append((f"{layer}.running_var", state.var))
    return items


def checkpoint_bytes(model: OrderNet, extra: dict | None = None) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in _named_arrays(model):
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(blob)
        offset += len(blob)
    header = {"format_version": FORMAT_VERSION, "config": model.config.to_dict(), "tensors": manifest}
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<I", len(head)) + head + b"".join(chunks)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, model: OrderNet, extra: dict | None = None) -> str:
    """Write ``model`` to ``path``; returns the SHA-256 hex digest of the file."""
    data = checkpoint_bytes(model, extra)
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> OrderNet:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an ONET checkpoint")
    if len(raw) < 9:
        raise CheckpointError(f"{path}: truncated header")
    if raw[4] != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {raw[4]}")
    (head_len,) = struct.unpack("<I", raw[5:9])
    try:
        header = json.loads(raw[9 : 9 + head_len].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        entries = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = memoryview(raw)[9 + head_len :]
    model = OrderNet(config)
    expected = {name for name, _ in _named_arrays(model)}
    listed = {entry["name"] for entry in entries}
    if expected != listed:
        raise CheckpointError(f"{path}: tensor manifest mismatch: {sorted(expected ^ listed)}")
    dtype = model.params["start_token"].data.dtype
    for entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start < 0 or start + 4 * count > len(payload):
            raise CheckpointError(f"{path}: payload truncated at tensor {entry['name']}")
        arr = np.frombuffer(payload[start : start + 4 * count], dtype="<f4").reshape(shape)
        name = entry["name"]
        if name.endswith(".running_mean"):
            model.bn[name[: -len(".running_mean")]].mean = arr.astype(np.float64)
        elif name.endswith(".running_var"):
            model.bn[name[: -len(".running_var")]].var = arr.astype(np.float64)
        else:
            target = model.params[name]
            if target.shape != shape:
                raise CheckpointError(f"{path}: {name} has shape {shape}, model expects {target.shape}")
            target.data = arr.astype(dtype)
    model.eval()
    return model

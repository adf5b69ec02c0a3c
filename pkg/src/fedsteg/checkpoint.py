"""Versioned binary checkpoint format shared by every model in the package.

Layout: 4-byte magic, little-endian u32 format version, u32 header
length, JSON header, then the raw tensor bytes concatenated in header
order.  The header records the model kind, an architecture hash, the
image geometry, and one (name, dtype, shape) entry per tensor, so a
load can verify it is being applied to a compatible model.
"""

import hashlib
import json
import struct
from collections import OrderedDict

import numpy as np
import torch

MAGIC = b"FSCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def arch_hash(kind: str, tensors) -> str:
    """Hash of the model kind plus every tensor's name/dtype/shape."""
    h = hashlib.sha256()
    h.update(kind.encode())
    for name, t in tensors.items():
        h.update(f"|{name}:{t.dtype}:{tuple(t.shape)}".encode())
    return h.hexdigest()[:16]


def save_checkpoint(path, kind: str, tensors, image_shape, extra=None):
    """Write named arrays to ``path``; ``image_shape`` is (H, W, Ch)."""
    tensors = OrderedDict(tensors)
    height, width, channels = image_shape
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "arch_hash": arch_hash(kind, tensors),
        "height": int(height),
        "width": int(width),
        "channels": int(channels),
        "extra": extra or {},
        "tensors": [
            {"name": name, "dtype": str(t.dtype), "shape": list(t.shape)}
            for name, t in tensors.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for t in tensors.values():
            f.write(np.ascontiguousarray(t).tobytes())


def load_checkpoint(path, expect_kind=None):
    """Read (header, OrderedDict of arrays); round-trips bit-exactly."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        try:
            header = json.loads(f.read(header_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
        tensors = OrderedDict()
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    if header["arch_hash"] != arch_hash(header["kind"], tensors):
        raise CheckpointError(f"{path}: architecture hash mismatch")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise CheckpointError(
            f"{path}: checkpoint kind {header['kind']!r}, expected {expect_kind!r}"
        )
    return header, tensors


def module_state_arrays(module: torch.nn.Module) -> OrderedDict:
    """Full state of a torch module as ordered numpy arrays."""
    out = OrderedDict()
    for name, tensor in module.state_dict().items():
        out[name] = tensor.detach().cpu().numpy().copy()
    return out


def load_module_state(module: torch.nn.Module, arrays):
    state = OrderedDict((name, torch.from_numpy(np.ascontiguousarray(a))) for name, a in arrays.items())
    module.load_state_dict(state, strict=True)


def save_module(path, kind: str, module: torch.nn.Module, image_shape, extra=None):
    save_checkpoint(path, kind, module_state_arrays(module), image_shape, extra=extra)


def load_into_module(path, module: torch.nn.Module, expect_kind=None):
    header, tensors = load_checkpoint(path, expect_kind=expect_kind)
    load_module_state(module, tensors)
    return header

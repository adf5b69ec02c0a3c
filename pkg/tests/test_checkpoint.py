"""Binary checkpoint container: bit-exact round-trips and integrity checks."""

import struct
from collections import OrderedDict

import numpy as np
import pytest
import torch

from fedsteg.checkpoint import (
    MAGIC,
    CheckpointError,
    arch_hash,
    load_checkpoint,
    load_into_module,
    save_checkpoint,
    save_module,
)


def _sample_tensors():
    rng = np.random.default_rng(0)
    return OrderedDict(
        [
            ("w1", rng.normal(size=(3, 5)).astype(np.float32)),
            ("b1", rng.normal(size=(5,)).astype(np.float64)),
            ("count", np.array(7, dtype=np.int64)),
        ]
    )


def test_round_trip_bit_exact(tmp_path):
    path = str(tmp_path / "m.ckpt")
    tensors = _sample_tensors()
    save_checkpoint(path, "demo", tensors, image_shape=(8, 9, 3), extra={"k": 1})
    header, loaded = load_checkpoint(path)
    assert header["kind"] == "demo"
    assert header["height"] == 8 and header["width"] == 9 and header["channels"] == 3
    assert header["extra"] == {"k": 1}
    assert list(loaded) == list(tensors)
    for name in tensors:
        assert loaded[name].dtype == tensors[name].dtype
        assert np.array_equal(loaded[name], tensors[name])


def test_expected_kind_enforced(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, "demo", _sample_tensors(), image_shape=(8, 8, 3))
    load_checkpoint(path, expect_kind="demo")
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect_kind="other")


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, "demo", _sample_tensors(), image_shape=(8, 8, 3))
    blob = bytearray(open(path, "rb").read())
    blob[:4] = b"XXXX"
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_bad_version_rejected(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, "demo", _sample_tensors(), image_shape=(8, 8, 3))
    blob = bytearray(open(path, "rb").read())
    blob[4:8] = struct.pack("<I", 99)
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncation_rejected(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, "demo", _sample_tensors(), image_shape=(8, 8, 3))
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_trailing_garbage_rejected(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, "demo", _sample_tensors(), image_shape=(8, 8, 3))
    with open(path, "ab") as f:
        f.write(b"\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_corrupt_header_rejected(tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, "demo", _sample_tensors(), image_shape=(8, 8, 3))
    blob = bytearray(open(path, "rb").read())
    blob[14] ^= 0xFF
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_arch_hash_sensitive_to_names_shapes_dtypes():
    t = _sample_tensors()
    base = arch_hash("demo", t)
    renamed = OrderedDict((("x" + k, v) for k, v in t.items()))
    assert arch_hash("demo", renamed) != base
    assert arch_hash("other", t) != base
    reshaped = OrderedDict(t)
    reshaped["w1"] = t["w1"].reshape(5, 3)
    assert arch_hash("demo", reshaped) != base
    # hash only covers structure: new values, same layout -> same hash
    revalued = OrderedDict((k, v.copy()) for k, v in t.items())
    revalued["w1"] += 1
    assert arch_hash("demo", revalued) == base


def test_module_round_trip(tmp_path):
    torch.manual_seed(0)
    mod = torch.nn.Sequential(torch.nn.Conv2d(3, 4, 3), torch.nn.BatchNorm2d(4))
    path = str(tmp_path / "mod.ckpt")
    save_module(path, "demo", mod, image_shape=(8, 8, 3))
    torch.manual_seed(1)
    other = torch.nn.Sequential(torch.nn.Conv2d(3, 4, 3), torch.nn.BatchNorm2d(4))
    load_into_module(path, other, expect_kind="demo")
    for a, b in zip(mod.state_dict().values(), other.state_dict().values()):
        assert torch.equal(a, b)


def test_module_architecture_mismatch(tmp_path):
    mod = torch.nn.Linear(4, 2)
    path = str(tmp_path / "mod.ckpt")
    save_module(path, "demo", mod, image_shape=(8, 8, 3))
    wrong = torch.nn.Linear(4, 3)
    with pytest.raises((CheckpointError, RuntimeError)):
        load_into_module(path, wrong, expect_kind="demo")

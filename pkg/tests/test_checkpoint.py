import struct

import numpy as np
import pytest

from graphkbc.autodiff import Adam, Parameter
from graphkbc.checkpoint import (MAGIC, VERSION, CheckpointError, load_checkpoint,
                                 save_checkpoint)


def sample_params(dtype=np.float64):
    rng = np.random.default_rng(0)
    return [
        Parameter("a.weight", rng.normal(size=(3, 4)).astype(dtype)),
        Parameter("b.vector", rng.normal(size=7).astype(dtype)),
        Parameter("c.frozen", rng.normal(size=(2, 2, 2)).astype(dtype),
                  trainable=False),
    ]


def test_header_layout(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, sample_params())
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    version, code, count = struct.unpack_from("<IBI", raw, 4)
    assert version == VERSION
    assert code == 1          # float64
    assert count == 3
    (nlen,) = struct.unpack_from("<H", raw, 13)
    assert raw[15:15 + nlen].decode() == "a.weight"


def test_roundtrip_values(tmp_path):
    path = tmp_path / "m.ckpt"
    params = sample_params()
    save_checkpoint(path, params)
    values, dtype, adam = load_checkpoint(path)
    assert dtype == np.float64
    assert adam is None
    for p in params:
        np.testing.assert_array_equal(values[p.name], p.value)


def test_roundtrip_float32(tmp_path):
    path = tmp_path / "m.ckpt"
    params = sample_params(np.float32)
    save_checkpoint(path, params)
    values, dtype, _ = load_checkpoint(path)
    assert dtype == np.float32
    np.testing.assert_array_equal(values["b.vector"], params[1].value)


def test_roundtrip_adam_state(tmp_path):
    path = tmp_path / "m.ckpt"
    params = sample_params()
    opt = Adam(params, lr=0.01)
    for p in params:
        if p.trainable:
            p.grad[:] = 0.5
    opt.step()
    save_checkpoint(path, params, opt)
    _, _, snapshot = load_checkpoint(path)
    assert snapshot.step == 1
    for p in params:
        np.testing.assert_array_equal(snapshot.m[p.name], opt.states[p.name].m)
        np.testing.assert_array_equal(snapshot.v[p.name], opt.states[p.name].v)


def test_mixed_dtypes_rejected(tmp_path):
    params = [Parameter("a", np.zeros(2, dtype=np.float32)),
              Parameter("b", np.zeros(2, dtype=np.float64))]
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "m.ckpt", params)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, sample_params())
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_save_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, sample_params())
    save_checkpoint(b, sample_params())
    assert a.read_bytes() == b.read_bytes()

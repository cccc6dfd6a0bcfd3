import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from hmjnd.params import (MAGIC, ParamStore, TensorFormatError, load_state, read_manifest,
                          read_tensor, save_params, trunc_normal, write_tensor)

f32 = st.floats(-1e6, 1e6, width=32, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5), elements=f32))
def test_tensor_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("t") / "x.hmt"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.dtype == np.float64
    assert back.shape == arr.shape
    np.testing.assert_array_equal(back, arr.astype(np.float64))


def test_layout_is_little_endian(tmp_path):
    path = tmp_path / "x.hmt"
    write_tensor(path, np.array([[1.0, 2.0, 3.0]]))
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack("<3I", raw[4:16]) == (2, 1, 3)
    assert struct.unpack("<3f", raw[16:]) == (1.0, 2.0, 3.0)


@pytest.mark.parametrize("mutate,where", [
    (lambda r: b"HMT2" + r[4:], "byte 0"),
    (lambda r: r[:6], "byte 4"),
    (lambda r: r[:10], "byte 8"),
    (lambda r: r[:-2], "offset 16"),
    (lambda r: r + b"\0\0\0\0", "offset 16"),
])
def test_malformed_files_name_offsets(tmp_path, mutate, where):
    path = tmp_path / "x.hmt"
    write_tensor(path, np.zeros((1, 3)))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(TensorFormatError, match=where):
        read_tensor(path)


def test_trunc_normal_respects_bound():
    x = trunc_normal(np.random.default_rng(0), (20000,), std=0.5, bound=2.0)
    assert np.abs(x).max() <= 1.0
    assert 0.4 < x.std() < 0.5


def test_store_rejects_duplicates():
    s = ParamStore()
    s.add("a.w", np.zeros(2))
    with pytest.raises(KeyError):
        s.add("a.w", np.zeros(2))
    assert "a.w" in s and len(s) == 1


def test_save_and_load(tmp_path):
    s = ParamStore()
    s.add("enc.w", np.arange(6.0).reshape(2, 3))
    s.add("enc.b", np.array([0.5]))
    save_params(s, tmp_path, {"model.channels": "8"})
    meta, entries = read_manifest(tmp_path)
    assert meta == {"model.channels": "8"}
    assert [p for p, _ in entries] == ["enc.w", "enc.b"]
    _, state = load_state(tmp_path)
    t = ParamStore()
    t.add("enc.w", np.zeros((2, 3)))
    t.add("enc.b", np.zeros(1))
    t.load_state_dict(state)
    np.testing.assert_array_equal(t["enc.w"].data, s["enc.w"].data)


def test_load_state_checks_keys_and_shapes():
    s = ParamStore()
    s.add("w", np.zeros(3))
    with pytest.raises(KeyError):
        s.load_state_dict({})
    with pytest.raises(ValueError):
        s.load_state_dict({"w": np.zeros(4)})

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmjnd import autodiff as ad
from hmjnd.layers import (SEGate, WindowAttention, WindowEncoder, shift_mask, window_merge,
                          window_partition, windowed_cross_attention)
from hmjnd.params import ParamStore
from gradcheck import check


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.sampled_from([2, 4]), st.data())
def test_partition_then_merge_is_identity(nh, nw, window, data):
    shift = data.draw(st.integers(0, window - 1))
    x = np.random.default_rng(nh * 7 + nw).standard_normal((2, 3, nh * window, nw * window))
    tokens = window_partition(ad.Tensor(x), window, shift)
    assert tokens.shape == (2 * nh * nw, window * window, 3)
    back = window_merge(tokens, window, shift, nh * window, nw * window)
    np.testing.assert_array_equal(back.data, x)


def test_partition_groups_contiguous_pixels():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    tokens = window_partition(ad.Tensor(x), 2, 0).data[:, :, 0]
    np.testing.assert_array_equal(tokens[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(tokens[3], [10, 11, 14, 15])


def test_partition_rejects_bad_sizes():
    with pytest.raises(ValueError):
        window_partition(ad.Tensor(np.zeros((1, 1, 6, 8))), 4, 0)
    with pytest.raises(ValueError):
        window_partition(ad.Tensor(np.zeros((1, 1, 8, 8))), 4, 4)


def test_shift_mask_structure():
    m = shift_mask(8, 8, 4, 2)
    assert m.shape == (4, 16, 16)
    assert not m.flags.writeable
    assert np.all(np.diagonal(m, axis1=1, axis2=2) == 0)
    np.testing.assert_array_equal(m, m.transpose(0, 2, 1))
    assert np.all(m[0] == 0)            # top-left window never wraps
    assert np.isinf(m[3]).sum() > 0      # bottom-right mixes four regions


def oracle_attention(q, k, v, attn: WindowAttention, heads, window, shift):
    """Loop-based windowed attention on NHWC arrays, written without the library helpers."""
    lin = lambda x, layer: x @ layer.weight.data.T + layer.bias.data
    n, h, w, c = q.shape
    hp, wp = h + (-h) % window, w + (-w) % window
    pad = lambda a: np.pad(a, ((0, 0), (0, hp - h), (0, wp - w), (0, 0)))
    q, k, v = pad(q), pad(k), pad(v)
    if hp <= window and wp <= window:
        shift = 0
    d = c // heads
    out = np.zeros((n, hp, wp, c))
    for b in range(n):
        rq, rk, rv = (np.roll(a[b], (-shift, -shift), axis=(0, 1)) for a in (q, k, v))
        res = np.zeros((hp, wp, c))
        for wy in range(0, hp, window):
            for wx in range(0, wp, window):
                cells = [(y, x) for y in range(wy, wy + window) for x in range(wx, wx + window)]
                tq = lin(np.array([rq[p] for p in cells]), attn.q)
                tk = lin(np.array([rk[p] for p in cells]), attn.k)
                tv = lin(np.array([rv[p] for p in cells]), attn.v)
                wrapped = [(y >= hp - shift if shift else False, x >= wp - shift if shift else False)
                           for y, x in cells]
                mixed = np.zeros((len(cells), c))
                for hd in range(heads):
                    sl = slice(hd * d, (hd + 1) * d)
                    for i in range(len(cells)):
                        s = np.array([tq[i, sl] @ tk[j, sl] / math.sqrt(d) if wrapped[i] == wrapped[j]
                                      else -np.inf for j in range(len(cells))])
                        p = np.exp(s - s.max())
                        p /= p.sum()
                        mixed[i, sl] = p @ tv[:, sl]
                mixed = lin(mixed, attn.proj)
                for i, cell in enumerate(cells):
                    res[cell] = mixed[i]
        out[b] = np.roll(res, (shift, shift), axis=(0, 1))
    return out[:, :h, :w]


@pytest.mark.parametrize("h,w,shift", [(8, 8, 0), (8, 8, 2), (6, 7, 2), (4, 4, 2), (8, 12, 2)])
def test_window_attention_matches_loop_oracle(h, w, shift):
    rng = np.random.default_rng(h * w + shift)
    store = ParamStore()
    attn = WindowAttention(store, "a", 4, 2, rng)
    q, k, v = (rng.standard_normal((2, h, w, 4)) for _ in range(3))
    got = attn.nhwc(ad.Tensor(q), ad.Tensor(k), ad.Tensor(v), 4, shift).data
    want = oracle_attention(q, k, v, attn, 2, 4, shift)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_nchw_wrapper_agrees_with_nhwc():
    rng = np.random.default_rng(5)
    attn = WindowAttention(ParamStore(), "a", 4, 2, rng)
    q, k, v = (rng.standard_normal((1, 4, 8, 8)) for _ in range(3))
    a = windowed_cross_attention(ad.Tensor(q), ad.Tensor(k), ad.Tensor(v), 2, 4, 2, attn).data
    t = lambda x: ad.Tensor(x.transpose(0, 2, 3, 1))
    b = attn.nhwc(t(q), t(k), t(v), 4, 2).data.transpose(0, 3, 1, 2)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        windowed_cross_attention(ad.Tensor(q), ad.Tensor(k), ad.Tensor(v), 4, 4, 2, attn)


@pytest.mark.parametrize("shift", [0, 2])
def test_window_attention_gradients(shift):
    rng = np.random.default_rng(9)
    attn = WindowAttention(ParamStore(), "a", 4, 2, rng)
    inputs = [rng.standard_normal((1, 6, 8, 4)) for _ in range(3)]
    errors = check(lambda q, k, v: attn.nhwc(q, k, v, 4, shift), inputs, samples=25)
    assert max(errors) < 1e-4


def test_window_encoder_gradients():
    rng = np.random.default_rng(2)
    enc = WindowEncoder(ParamStore(), "e", 4, 2, 4, 2, rng)
    inputs = [rng.standard_normal((1, 4, 8, 8)) for _ in range(2)]
    errors = check(enc, inputs, samples=25)
    assert np.mean(np.asarray(errors) < 1e-4) >= 0.99


@settings(max_examples=30, deadline=None)
@given(st.floats(-4, 4), st.integers(0, 10_000))
def test_se_gate_values_strictly_inside_unit_interval(scale, seed):
    rng = np.random.default_rng(seed)
    gate = SEGate(ParamStore(), "g", 8, 4, rng)
    g = gate.gate(ad.Tensor(scale * rng.standard_normal((2, 8, 3, 3)))).data
    assert np.all((g > 0) & (g < 1))


def test_sigmoid_stays_positive_for_very_negative_logits():
    # float64 rounds sigmoid(z) to 1 beyond z ~ 37, so only the lower side is strict
    s = ad.sigmoid(ad.Tensor(np.array([-700.0, -40.0, 0.0, 30.0]))).data
    assert np.all(s > 0) and np.all(s[:-1] < 1)


def test_se_gate_is_residual_gating():
    rng = np.random.default_rng(0)
    gate = SEGate(ParamStore(), "g", 8, 4, rng)
    f = ad.Tensor(rng.standard_normal((1, 8, 4, 4)))
    g = gate.gate(f).data.reshape(1, 8, 1, 1)
    np.testing.assert_allclose(gate(f).data, f.data * g + f.data)
    with pytest.raises(ValueError):
        SEGate(ParamStore(), "h", 6, 4, rng)

"""The tensor engine: forward semantics against naive oracles, gradients
against finite differences, and the circular-shift exactness contract."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pano360.autodiff import (PadMode, Parameter, Tensor, channel_norm, conv2d,
                              conv_temporal, init_uniform, linear, no_grad,
                              pixel_shuffle, pixel_unshuffle, silu, tmean,
                              tsum, upsample_nearest2x, zero_grads)
from pano360.gradcheck import backward_and_check

RNG = np.random.default_rng(0)


def _param(name, shape, rng=None, scale=1.0):
    r = rng if rng is not None else RNG
    return Parameter(name, (scale * r.standard_normal(shape)).astype(np.float32))


# ------------------------------------------------------------------ basics

def test_tensor_casts_to_float32():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float32


def test_parameter_wants_gradients():
    p = _param("p", (3,))
    assert p.requires_grad and p.name == "p"


def test_no_grad_detaches():
    a = _param("a", (4,))
    with no_grad():
        out = silu(a * a)
    assert not out.requires_grad
    out2 = silu(a * a)
    assert out2.requires_grad


def test_add_mul_broadcast_gradients():
    a = _param("a", (3, 1))
    b = _param("b", (1, 4))
    loss = tsum(a * b + b)
    loss.backward()
    # d/da sum(a*b + b) = sum_j b_j per row; d/db = sum_i a_i + 3 per column
    assert np.allclose(a.grad, np.full((3, 1), b.data.sum()), atol=1e-5)
    assert np.allclose(b.grad, np.full((1, 4), a.data.sum() + 3.0), atol=1e-5)


def test_scalar_broadcast_gradient():
    a = _param("a", ())
    x = Tensor(np.ones((2, 3), np.float32))
    loss = tsum(x * a)
    loss.backward()
    assert a.grad.shape == () and math.isclose(float(a.grad), 6.0, rel_tol=1e-6)


def test_zero_grads():
    a = _param("a", (2,))
    tsum(a * a).backward()
    assert a.grad is not None
    zero_grads([a])
    assert a.grad is None


def test_silu_matches_reference():
    x = np.linspace(-6, 6, 41).astype(np.float32)
    got = silu(Tensor(x)).data
    want = x / (1.0 + np.exp(-x.astype(np.float64)))
    assert np.abs(got - want).max() < 1e-6


def test_silu_extreme_inputs_stable():
    # exp overflows float32 past ~88.7; the clamp must stay finite anyway
    x = np.array([-120.0, 120.0], np.float32)
    got = silu(Tensor(x)).data
    assert np.all(np.isfinite(got))
    assert got[0] == 0.0 and got[1] == np.float32(120.0)


def test_tmean_tsum_gradients():
    a = _param("a", (3, 4))
    tmean(a).backward()
    assert np.allclose(a.grad, np.full((3, 4), 1.0 / 12.0), atol=1e-7)
    zero_grads([a])
    tsum(a).backward()
    assert np.allclose(a.grad, np.ones((3, 4)), atol=1e-7)


def test_linear_forward_and_gradients():
    x = _param("x", (5, 3))
    w = _param("w", (3, 2))
    b = _param("b", (2,))
    out = linear(x, w, b)
    assert np.allclose(out.data, x.data @ w.data + b.data, atol=1e-6)
    err = backward_and_check(lambda: tsum(silu(linear(x, w, b))), [x, w, b])
    assert err < 1e-2


# ---------------------------------------------------------------- conv oracles

def _naive_conv2d(x, k, b, stride=1, circ=False):
    B, C, F, Hh, Ww = x.shape
    O, _, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((B, C, F, Hh + 2 * ph, Ww + 2 * pw))
    xp[..., ph:ph + Hh, pw:pw + Ww] = x
    if circ and pw:
        xp[..., ph:ph + Hh, :pw] = x[..., :, -pw:]
        xp[..., ph:ph + Hh, -pw:] = x[..., :, :pw]
    Ho, Wo = (Hh + stride - 1) // stride, (Ww + stride - 1) // stride
    out = np.zeros((B, O, F, Ho, Wo))
    for bb in range(B):
        for o in range(O):
            for f in range(F):
                for i in range(Ho):
                    for j in range(Wo):
                        patch = xp[bb, :, f, i * stride:i * stride + kh,
                                   j * stride:j * stride + kw]
                        out[bb, o, f, i, j] = np.sum(patch * k[o, :, 0])
            if b is not None:
                out[bb, o] += b[o]
    return out


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("pad", [PadMode.ZEROS, PadMode.CIRCULAR])
def test_conv2d_matches_naive(stride, pad):
    rng = np.random.default_rng(10)
    x = _param("x", (2, 3, 2, 6, 8), rng)
    k = _param("k", (4, 3, 1, 3, 3), rng)
    b = _param("b", (4,), rng)
    got = conv2d(x, k, b, stride=stride, pad=pad).data
    want = _naive_conv2d(x.data, k.data, b.data, stride, pad is PadMode.CIRCULAR)
    assert got.shape == want.shape
    assert np.abs(got - want).max() < 1e-4


def test_conv2d_1x1_and_no_bias():
    rng = np.random.default_rng(11)
    x = _param("x", (1, 2, 3, 4, 4), rng)
    k = _param("k", (5, 2, 1, 1, 1), rng)
    got = conv2d(x, k).data
    want = _naive_conv2d(x.data, k.data, None)
    assert np.abs(got - want).max() < 1e-5


@pytest.mark.parametrize("pad", [PadMode.ZEROS, PadMode.CIRCULAR])
def test_conv2d_gradients(pad):
    rng = np.random.default_rng(12)
    x = _param("x", (1, 2, 2, 4, 6), rng)
    k = _param("k", (3, 2, 1, 3, 3), rng, scale=0.5)
    b = _param("b", (3,), rng)
    err = backward_and_check(lambda: tsum(conv2d(x, k, b, pad=pad)), [x, k, b],
                             n_coords=12)
    assert err < 1e-2


def test_conv2d_stride2_gradients():
    rng = np.random.default_rng(13)
    x = _param("x", (1, 2, 2, 4, 6), rng)
    k = _param("k", (3, 2, 1, 3, 3), rng, scale=0.5)
    err = backward_and_check(lambda: tsum(conv2d(x, k, stride=2)), [x, k],
                             n_coords=12)
    assert err < 1e-2


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 6),
       st.integers(4, 12), st.integers(0, 11), st.booleans(), st.integers(0, 10_000))
def test_conv2d_circular_shift_equivariance(cin, cout, h, w, shift, k3, seed):
    # conv(shift(x)) == shift(conv(x)), bit for bit, any kernel, any shift
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, cin, 2, h, w)).astype(np.float32)
    k = rng.standard_normal((cout, cin, 1, 3, 3) if k3 else
                            (cout, cin, 1, 1, 1)).astype(np.float32)
    b = rng.standard_normal(cout).astype(np.float32)
    conv = lambda a: conv2d(Tensor(a), Tensor(k), Tensor(b), pad=PadMode.CIRCULAR).data
    shifted_in = conv(np.roll(x, shift, axis=-1))
    shifted_out = np.roll(conv(x), shift, axis=-1)
    assert np.array_equal(shifted_in, shifted_out)


def _naive_temporal(x, k, b):
    B, C, F, Hh, Ww = x.shape
    O, _, kt, _, _ = k.shape
    pf = kt // 2
    xp = np.zeros((B, C, F + 2 * pf, Hh, Ww))
    xp[:, :, pf:pf + F] = x
    out = np.zeros((B, O, F, Hh, Ww))
    for o in range(O):
        for f in range(F):
            for tap in range(kt):
                out[:, o, f] += np.einsum("bchw,c->bhw", xp[:, :, f + tap],
                                          k[o, :, tap, 0, 0])
        if b is not None:
            out[:, o] += b[o]
    return out


def test_conv_temporal_matches_naive():
    rng = np.random.default_rng(14)
    x = _param("x", (2, 3, 5, 4, 6), rng)
    k = _param("k", (4, 3, 3, 1, 1), rng)
    b = _param("b", (4,), rng)
    got = conv_temporal(x, k, b).data
    want = _naive_temporal(x.data, k.data, b.data)
    assert np.abs(got - want).max() < 1e-4


def test_conv_temporal_single_frame():
    # zero frame padding: with one frame only the center tap contributes
    rng = np.random.default_rng(15)
    x = _param("x", (1, 2, 1, 3, 4), rng)
    k = _param("k", (2, 2, 3, 1, 1), rng)
    got = conv_temporal(x, k).data
    center = np.einsum("bcfhw,oc->bofhw", x.data, k.data[:, :, 1, 0, 0])
    assert np.abs(got - center).max() < 1e-6


def test_conv_temporal_gradients():
    rng = np.random.default_rng(16)
    x = _param("x", (1, 2, 4, 3, 4), rng)
    k = _param("k", (3, 2, 3, 1, 1), rng, scale=0.5)
    b = _param("b", (3,), rng)
    err = backward_and_check(lambda: tsum(conv_temporal(x, k, b)), [x, k, b],
                             n_coords=12)
    assert err < 1e-2


def test_conv_temporal_circular_shift_equivariance():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((1, 3, 4, 4, 10)).astype(np.float32)
    k = rng.standard_normal((3, 3, 3, 1, 1)).astype(np.float32)
    f = lambda a: conv_temporal(Tensor(a), Tensor(k), pad=PadMode.CIRCULAR).data
    for shift in (1, 3, 7):
        assert np.array_equal(f(np.roll(x, shift, -1)), np.roll(f(x), shift, -1))


# --------------------------------------------------------------- normalization

def test_channel_norm_matches_reference():
    rng = np.random.default_rng(18)
    x = _param("x", (2, 3, 2, 4, 6), rng, scale=2.0)
    g = _param("g", (3,), rng)
    b = _param("b", (3,), rng)
    got = channel_norm(x, g, b).data
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=(2, 3, 4), keepdims=True)
    var = xd.var(axis=(2, 3, 4), keepdims=True)
    want = (xd - mu) / np.sqrt(var + 1e-5)
    want = want * g.data.reshape(1, 3, 1, 1, 1) + b.data.reshape(1, 3, 1, 1, 1)
    assert np.abs(got - want).max() < 1e-5


def test_channel_norm_output_standardized():
    rng = np.random.default_rng(19)
    x = _param("x", (1, 2, 3, 8, 8), rng, scale=5.0)
    ones = Parameter("g", np.ones(2, np.float32))
    zeros = Parameter("b", np.zeros(2, np.float32))
    out = channel_norm(x, ones, zeros).data
    for c in range(2):
        assert abs(out[0, c].mean()) < 1e-5
        assert abs(out[0, c].std() - 1.0) < 1e-3


def test_channel_norm_gradients():
    rng = np.random.default_rng(20)
    x = _param("x", (1, 2, 2, 4, 4), rng)
    g = _param("g", (2,), rng)
    b = _param("b", (2,), rng)
    err = backward_and_check(lambda: tsum(silu(channel_norm(x, g, b))), [x, g, b],
                             n_coords=12)
    assert err < 1e-2


def test_channel_norm_shift_exact():
    # per-column partial sums reduced in sorted order: statistics, and with
    # them the output, are bit-stable under any column rotation
    rng = np.random.default_rng(21)
    x = rng.standard_normal((1, 3, 2, 8, 16)).astype(np.float32)
    g = Tensor(rng.standard_normal(3).astype(np.float32))
    b = Tensor(rng.standard_normal(3).astype(np.float32))
    base = channel_norm(Tensor(x), g, b).data
    for shift in (1, 5, 8, 15):
        rolled = channel_norm(Tensor(np.roll(x, shift, -1)), g, b).data
        assert np.array_equal(rolled, np.roll(base, shift, -1))


# ------------------------------------------------------------------ reshapers

def test_pixel_unshuffle_layout():
    # 2x2 block (a b / c d) becomes 4 channels in row-major block order
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 1, 4, 4)
    out = pixel_unshuffle(Tensor(x), 2).data
    assert out.shape == (1, 4, 1, 2, 2)
    assert out[0, :, 0, 0, 0].tolist() == [0.0, 1.0, 4.0, 5.0]


def test_pixel_shuffle_inverts_unshuffle():
    rng = np.random.default_rng(22)
    x = rng.standard_normal((2, 3, 2, 8, 12)).astype(np.float32)
    for r in (1, 2, 4):
        back = pixel_shuffle(pixel_unshuffle(Tensor(x), r), r).data
        assert np.array_equal(back, x)


def test_pixel_unshuffle_gradients():
    rng = np.random.default_rng(23)
    x = _param("x", (1, 2, 2, 4, 4), rng)
    err = backward_and_check(lambda: tsum(silu(pixel_unshuffle(x, 2))), [x],
                             n_coords=8)
    assert err < 1e-2


def test_upsample_nearest2x_values_and_gradients():
    x = _param("x", (1, 1, 1, 2, 2))
    out = upsample_nearest2x(x)
    assert out.data.shape == (1, 1, 1, 4, 4)
    assert np.array_equal(out.data[0, 0, 0, :2, :2],
                          np.full((2, 2), x.data[0, 0, 0, 0, 0]))
    tsum(out).backward()
    assert np.allclose(x.grad, np.full((1, 1, 1, 2, 2), 4.0))


def test_reshape_gradients():
    x = _param("x", (2, 6))
    err = backward_and_check(lambda: tsum(silu(x.reshape((3, 4)))), [x],
                             n_coords=6)
    assert err < 1e-2


# ------------------------------------------------------------------ gradcheck

def test_gradcheck_rejects_nonscalar_loss():
    x = _param("x", (3,))
    with pytest.raises(ValueError):
        backward_and_check(lambda: x * x, [x])


def test_gradcheck_rejects_empty_params():
    with pytest.raises(ValueError):
        backward_and_check(lambda: tsum(Tensor(np.ones(2, np.float32))), [])


def test_gradcheck_catches_wrong_gradient():
    # a loss whose graph is deliberately detached from the parameter gives
    # autodiff zero but a real finite difference
    x = _param("x", (4,))

    def loss():
        detached = Tensor(x.data * x.data)
        return tsum(detached)

    err = backward_and_check(loss, [x], n_coords=4)
    assert err > 0.5


def test_init_uniform_bounds():
    rng = np.random.default_rng(24)
    w = init_uniform(rng, (50, 50), fan_in=25)
    assert w.dtype == np.float32
    assert np.abs(w).max() <= 1.0 / 5.0

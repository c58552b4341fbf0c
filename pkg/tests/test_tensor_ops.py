"""Forward-path checks of the tensor kernels against brute-force oracles."""

import numpy as np
import pytest

from egowm.tensor import (
    LayerSpec,
    Parameter,
    ShapeError,
    Tensor,
    conv_extent,
    infer_chain,
)
from egowm.tensor import ops


def naive_conv3d(x, w, b, stride, padding, causal=False):
    """Six-loop reference convolution, deliberately independent of im2col."""
    c_out, c_in, kt, kh, kw = w.shape
    st, sh, sw = stride
    if causal:
        pads = [(kt - 1, 0), (padding[1], padding[1]), (padding[2], padding[2])]
    else:
        pads = [(p, p) for p in padding]
    xp = np.pad(x, [(0, 0)] + pads)
    ot = (xp.shape[1] - kt) // st + 1
    oh = (xp.shape[2] - kh) // sh + 1
    ow = (xp.shape[3] - kw) // sw + 1
    out = np.zeros((c_out, ot, oh, ow), dtype=x.dtype)
    for co in range(c_out):
        for t in range(ot):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[:, t * st : t * st + kt, i * sh : i * sh + kh, j * sw : j * sw + kw]
                    out[co, t, i, j] = (patch * w[co]).sum() + b[co]
    return out


def naive_conv2d(x, w, b, stride, padding):
    c_out, c_in, kh, kw = w.shape
    sh, sw = stride
    xp = np.pad(x, [(0, 0), (padding[0], padding[0]), (padding[1], padding[1])])
    oh = (xp.shape[1] - kh) // sh + 1
    ow = (xp.shape[2] - kw) // sw + 1
    out = np.zeros((c_out, oh, ow), dtype=x.dtype)
    for co in range(c_out):
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, i * sh : i * sh + kh, j * sw : j * sw + kw]
                out[co, i, j] = (patch * w[co]).sum() + b[co]
    return out


def test_conv_extent_formula():
    # floor((81 + 2 - 3) / 2) + 1 = 41
    assert conv_extent(81, 3, 2, 1) == 41
    # stride 2, kernel 3, pad 1 on extent 7 -> 4
    assert conv_extent(7, 3, 2, 1) == 4
    with pytest.raises(ShapeError):
        conv_extent(1, 5, 1, 0)


def test_conv3d_matches_naive():
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.standard_normal((3, 5, 6, 6)).astype(np.float64)
        w = rng.standard_normal((4, 3, 3, 3, 3)).astype(np.float64)
        b = rng.standard_normal(4).astype(np.float64)
        got = ops.conv3d(Tensor(x), Tensor(w), Tensor(b), (2, 2, 2), (1, 1, 1))
        want = naive_conv3d(x, w, b, (2, 2, 2), (1, 1, 1))
        np.testing.assert_allclose(got.data, want, rtol=1e-12)


def test_conv3d_zero_weights_and_identity_kernel():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 5, 5)).astype(np.float32)
    zero_w = np.zeros((3, 2, 3, 3, 3), dtype=np.float32)
    zero_b = np.zeros(3, dtype=np.float32)
    out = ops.conv3d(Tensor(x), Tensor(zero_w), Tensor(zero_b), (1, 1, 1), (1, 1, 1))
    assert not out.data.any()

    ident = np.ones((1, 1, 1, 1, 1), dtype=np.float32)
    out = ops.conv3d(Tensor(x[:1]), Tensor(ident), Tensor(np.zeros(1, np.float32)))
    np.testing.assert_array_equal(out.data, x[:1])


def test_conv3d_rejects_channel_mismatch():
    x = Tensor(np.zeros((2, 4, 4, 4), np.float32))
    w = Tensor(np.zeros((1, 3, 3, 3, 3), np.float32))
    with pytest.raises(ShapeError, match="channels"):
        ops.conv3d(x, w, Tensor(np.zeros(1, np.float32)), (1, 1, 1), (1, 1, 1))


def test_conv2d_matches_naive_and_zero_input_bias():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 7, 7)).astype(np.float64)
    w = rng.standard_normal((5, 3, 3, 3)).astype(np.float64)
    b = rng.standard_normal(5).astype(np.float64)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), (2, 2), (1, 1))
    np.testing.assert_allclose(got.data, naive_conv2d(x, w, b, (2, 2), (1, 1)), rtol=1e-12)
    assert got.shape == (5, 4, 4)

    zero = np.zeros_like(x)
    got = ops.conv2d(Tensor(zero), Tensor(w), Tensor(b), (1, 1), (1, 1))
    np.testing.assert_allclose(got.data, np.broadcast_to(b[:, None, None], got.shape))


def test_causal_conv3d_causality_perturbation():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 6, 4, 4)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    base = ops.causal_conv3d(Tensor(x), Tensor(w), Tensor(b), (1, 1, 1), (0, 1, 1)).data
    bumped = x.copy()
    bumped[:, -1] += 5.0
    pert = ops.causal_conv3d(Tensor(bumped), Tensor(w), Tensor(b), (1, 1, 1), (0, 1, 1)).data
    np.testing.assert_array_equal(base[:, :-1], pert[:, :-1])
    assert not np.array_equal(base[:, -1], pert[:, -1])


def test_causal_conv3d_matches_naive_with_stride():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 9, 6, 6)).astype(np.float64)
    w = rng.standard_normal((3, 2, 3, 3, 3)).astype(np.float64)
    b = rng.standard_normal(3).astype(np.float64)
    got = ops.causal_conv3d(Tensor(x), Tensor(w), Tensor(b), (2, 2, 2), (0, 1, 1))
    want = naive_conv3d(x, w, b, (2, 2, 2), (0, 1, 1), causal=True)
    np.testing.assert_allclose(got.data, want, rtol=1e-12)
    assert got.shape[1] == (9 - 1) // 2 + 1


def test_group_norm_constant_input_is_zero():
    x = Tensor(np.full((4, 3, 3), 2.5, np.float64))
    out = ops.group_norm(x, 2, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_group_norm_reproduces_input_statistics():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 8, 8)).astype(np.float64) * 3.0 + 1.5
    mu, sigma = x.mean(), x.std()
    out = ops.group_norm(
        Tensor(x), 1, Tensor(np.full(6, sigma)), Tensor(np.full(6, mu))
    )
    assert abs(out.data.mean() - mu) < 1e-9
    # the eps stabilizer shrinks the restored spread by sigma^2/sqrt(sigma^2+eps)
    want_std = sigma * sigma / np.sqrt(sigma * sigma + 1e-5)
    assert abs(out.data.std() - want_std) < 1e-9
    assert abs(out.data.std() - sigma) < 1e-5


def test_group_norm_instance_mode_and_divisibility():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 5, 5)).astype(np.float64)
    out = ops.group_norm(Tensor(x), 3, Tensor(np.ones(3)), Tensor(np.zeros(3)))
    for c in range(3):
        want = (x[c] - x[c].mean()) / np.sqrt(x[c].var() + 1e-5)
        np.testing.assert_allclose(out.data[c], want, rtol=1e-10)
    with pytest.raises(ShapeError):
        ops.group_norm(Tensor(x), 2, Tensor(np.ones(3)), Tensor(np.zeros(3)))


def test_silu_frozen_oracle_values():
    # high-precision values of x / (1 + exp(-x))
    got = ops.silu(Tensor(np.array([0.0, 1.0, 20.0, -1.0], np.float64))).data
    np.testing.assert_allclose(
        got,
        [0.0, 0.7310585786300049, 19.999999958776928, -0.26894142136999512],
        rtol=1e-12,
    )
    assert abs(got[2] - 20.0) < 1e-6  # silu(x) -> x for large x


def test_linear_identity_zero_and_naive():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((5, 4)).astype(np.float64)
    eye = np.eye(4)
    out = ops.linear(Tensor(x), Tensor(eye), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, x)

    b = rng.standard_normal(3)
    out = ops.linear(Tensor(x), Tensor(np.zeros((4, 3))), Tensor(b))
    np.testing.assert_allclose(out.data, np.broadcast_to(b, (5, 3)))

    w = rng.standard_normal((4, 3))
    want = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(4):
                want[i, j] += x[i, k] * w[k, j]
            want[i, j] += b[j]
    got = ops.linear(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(got.data, want, rtol=1e-12)


def test_linear_rejects_width_mismatch():
    with pytest.raises(ShapeError):
        ops.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_rope_properties():
    rng = np.random.default_rng(8)
    n, d = 10, 16
    pos = rng.integers(0, 9, size=(n, 3))
    x = rng.standard_normal((n, d))
    ang0 = ops.rope_angles(pos, d // 2, shift=(0, 0, 0))
    ang_same = ops.rope_angles(pos, d // 2)
    np.testing.assert_array_equal(ang0, ang_same)  # shift 0 is bit-exact no-op

    rot = ops.rope_apply(Tensor(x), ang0).data
    np.testing.assert_allclose(
        np.linalg.norm(rot, axis=1), np.linalg.norm(x, axis=1), rtol=1e-6
    )

    # inner products depend only on position differences
    q = rng.standard_normal(d)
    k = rng.standard_normal(d)
    pi = np.array([[2, 3, 1]])
    pj = np.array([[5, 0, 4]])
    s = np.array([3, 7, 2])
    def rotated_dot(pq, pk):
        aq = ops.rope_angles(pq, d // 2)
        ak = ops.rope_angles(pk, d // 2)
        prod = ops.rope_apply(Tensor(q[None]), aq).data @ ops.rope_apply(Tensor(k[None]), ak).data.T
        return prod.item()
    assert abs(rotated_dot(pi, pj) - rotated_dot(pi + s, pj + s)) < 1e-6


def test_rope_rejects_odd_width():
    with pytest.raises(ShapeError):
        ops.rope_apply(Tensor(np.zeros((2, 5))), np.zeros((2, 2)))


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((6, 11)) * 10
    out = ops.softmax(Tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_singleton_kv_returns_value():
    rng = np.random.default_rng(10)
    q = rng.standard_normal((4, 8))
    k = rng.standard_normal((1, 8))
    v = rng.standard_normal((1, 8))
    out = ops.attention(Tensor(q), Tensor(k), Tensor(v), heads=2)
    np.testing.assert_allclose(out.data, np.broadcast_to(v, (4, 8)), rtol=1e-6)


def test_attention_duplicate_kv_invariance():
    rng = np.random.default_rng(11)
    q = rng.standard_normal((5, 8))
    k = rng.standard_normal((7, 8))
    v = rng.standard_normal((7, 8))
    base = ops.attention(Tensor(q), Tensor(k), Tensor(v), heads=1).data
    k2 = np.concatenate([k, k], axis=0)
    v2 = np.concatenate([v, v], axis=0)
    dup = ops.attention(Tensor(q), Tensor(k2), Tensor(v2), heads=1).data
    np.testing.assert_allclose(dup, base, rtol=1e-5, atol=1e-6)


def test_attention_output_length_tracks_queries():
    rng = np.random.default_rng(12)
    q = rng.standard_normal((6, 8))
    k = rng.standard_normal((6, 8))
    v = rng.standard_normal((6, 8))
    extra_k = rng.standard_normal((4, 8))
    extra_v = rng.standard_normal((4, 8))
    out_short = ops.attention(Tensor(q), Tensor(k), Tensor(v))
    out_long = ops.attention(
        Tensor(q),
        Tensor(np.concatenate([k, extra_k])),
        Tensor(np.concatenate([v, extra_v])),
    )
    assert out_short.shape == out_long.shape == (6, 8)
    with pytest.raises(ShapeError):
        ops.attention(Tensor(q), Tensor(k[:, :4]), Tensor(v))


def test_patchify3d_counts_and_gather_oracle():
    rng = np.random.default_rng(13)
    c, d = 3, 6
    x = rng.standard_normal((c, 2, 4, 4)).astype(np.float64)
    w = rng.standard_normal((d, c, 1, 2, 2)).astype(np.float64)
    b = rng.standard_normal(d).astype(np.float64)
    tokens = ops.patchify3d(Tensor(x), Tensor(w), Tensor(b), (1, 2, 2))
    assert tokens.shape == (2 * 2 * 2, d)

    # explicit index enumeration in (t, h, w) order
    idx = 0
    for t in range(2):
        for i in range(2):
            for j in range(2):
                patch = x[:, t : t + 1, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                want = (w * patch[None]).reshape(d, -1).sum(axis=1) + b
                np.testing.assert_allclose(tokens.data[idx], want, rtol=1e-12)
                idx += 1

    single = ops.patchify3d(
        Tensor(rng.standard_normal((c, 1, 2, 2))), Tensor(w), Tensor(b)
    )
    assert single.shape == (1, d)
    with pytest.raises(ShapeError):
        ops.patchify3d(Tensor(np.zeros((c, 1, 3, 4))), Tensor(w), Tensor(b))


def test_unpatchify_roundtrips_patchify_layout():
    rng = np.random.default_rng(14)
    c, gt, gh, gw = 5, 2, 3, 2
    lat = rng.standard_normal((c, gt, gh * 2, gw * 2)).astype(np.float64)
    # identity projection: one output channel per patch element
    d = c * 1 * 2 * 2
    w = np.zeros((d, c, 1, 2, 2))
    for ci in range(c):
        for a in range(2):
            for bq in range(2):
                w[ci * 4 + a * 2 + bq, ci, 0, a, bq] = 1.0
    tokens = ops.patchify3d(Tensor(lat), Tensor(w), Tensor(np.zeros(d)), (1, 2, 2))
    back = ops.unpatchify3d(tokens, (gt, gh, gw), c, (1, 2, 2))
    np.testing.assert_array_equal(back.data, lat)


def test_linearity_of_linear_maps():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((2, 4, 5, 5)).astype(np.float64)
    y = rng.standard_normal((2, 4, 5, 5)).astype(np.float64)
    w = rng.standard_normal((3, 2, 3, 3, 3)).astype(np.float64)
    zb = np.zeros(3)
    a, b = 1.7, -0.4
    lhs = ops.conv3d(Tensor(a * x + b * y), Tensor(w), Tensor(zb), (1, 1, 1), (1, 1, 1)).data
    rhs = (
        a * ops.conv3d(Tensor(x), Tensor(w), Tensor(zb), (1, 1, 1), (1, 1, 1)).data
        + b * ops.conv3d(Tensor(y), Tensor(w), Tensor(zb), (1, 1, 1), (1, 1, 1)).data
    )
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5)


def test_infer_chain_matches_execution():
    rng = np.random.default_rng(16)
    specs = [
        LayerSpec("conv3d", (3, 3, 3), (1, 2, 2), (1, 1, 1), 3, 8),
        LayerSpec("silu"),
        LayerSpec("causal_conv3d", (3, 3, 3), (2, 2, 2), (0, 1, 1), 8, 8),
        LayerSpec("patchify3d", (1, 2, 2), (1, 2, 2), (0, 0, 0), 8, 12),
    ]
    shape = infer_chain(specs, (3, 5, 8, 8))
    x = Tensor(rng.standard_normal((3, 5, 8, 8)).astype(np.float32))
    w1 = Tensor(rng.standard_normal((8, 3, 3, 3, 3)).astype(np.float32))
    w2 = Tensor(rng.standard_normal((8, 8, 3, 3, 3)).astype(np.float32))
    w3 = Tensor(rng.standard_normal((12, 8, 1, 2, 2)).astype(np.float32))
    zb8 = Tensor(np.zeros(8, np.float32))
    h = ops.conv3d(x, w1, zb8, (1, 2, 2), (1, 1, 1))
    h = ops.silu(h)
    h = ops.causal_conv3d(h, w2, zb8, (2, 2, 2), (0, 1, 1))
    tokens = ops.patchify3d(h, w3, Tensor(np.zeros(12, np.float32)), (1, 2, 2))
    t, hh, ww = shape[1], shape[2], shape[3]
    assert tokens.shape == (t * hh * ww, shape[0])

"""Differentiable primitives: convolutions, normalization, attention pieces.

Each op validates shapes up front, computes the forward value with numpy,
and registers a closure producing the parent gradients. Convolutions use an
im2col layout so both directions reduce to one matmul plus strided
scatter-adds.
"""

from __future__ import annotations

import numpy as np

from .core import Tensor, as_tensor, make_node


class ShapeError(ValueError):
    """Operation rejected because tensor extents are incompatible."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"mixed dtypes in one op: {sorted(d.name for d in dtypes)}")


# ---------------------------------------------------------------------------
# elementwise and structural
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_dtype(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_dtype(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_dtype(a, b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    out = a.data * np.asarray(s, dtype=a.dtype)

    def backward(g):
        return (g * np.asarray(s, dtype=g.dtype),)

    return make_node(out, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with optional broadcast batch dims (numpy semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_dtype(a, b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(out, (a, b), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return make_node(out, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return make_node(out, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    _check_same_dtype(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(out, tuple(tensors), backward)


def crop(a, slices: tuple[slice, ...]) -> Tensor:
    """Slice view copy; backward scatters into a zero tensor."""
    a = as_tensor(a)
    out = np.ascontiguousarray(a.data[slices])

    def backward(g):
        full = np.zeros_like(a.data)
        full[slices] = g
        return (full,)

    return make_node(out, (a,), backward)


def repeat(a, factor: int, axis: int) -> Tensor:
    """Nearest-neighbour upsampling along one axis."""
    a = as_tensor(a)
    out = np.repeat(a.data, factor, axis=axis)

    def backward(g):
        new_shape = list(a.shape)
        new_shape[axis + 1 : axis + 1] = [factor]
        new_shape[axis] = a.shape[axis]
        return (g.reshape(new_shape).sum(axis=axis + 1),)

    return make_node(out, (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------


def silu(a) -> Tensor:
    """x * sigmoid(x), elementwise."""
    a = as_tensor(a)
    # sigmoid saturates far before +-80; clipping avoids exp overflow
    sig = 1.0 / (1.0 + np.exp(-np.clip(a.data, -80.0, 80.0)))
    out = a.data * sig

    def backward(g):
        return (g * (sig * (1.0 + a.data * (1.0 - sig))),)

    return make_node(out, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return make_node(out, (a,), backward)


def group_norm(
    x, groups: int, gamma, beta, eps: float = 1e-5, per_frame: bool = False
) -> Tensor:
    """Normalize channel groups of a (C, *spatial) tensor to zero mean, unit var.

    gamma/beta are per-channel affine terms of shape (C,). With ``per_frame``
    set on a (C, T, ...) tensor, statistics are computed separately per
    temporal index so the op cannot leak future frames into past outputs
    (required inside causal encoder stacks).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check_same_dtype(x, gamma, beta)
    channels = x.shape[0]
    if channels % groups != 0:
        raise ShapeError(f"{channels} channels not divisible into {groups} groups")
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError("gamma/beta must be per-channel vectors")
    if per_frame and x.ndim < 2:
        raise ShapeError("per-frame statistics need a temporal axis")

    t_stat = x.shape[1] if per_frame else 1
    # (groups, channels-per-group, stat slices, positions); stats over axes 1, 3
    grouped = x.data.reshape(groups, channels // groups, t_stat, -1)
    mean = grouped.mean(axis=(1, 3), keepdims=True)
    var = grouped.var(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat4 = (grouped - mean) * inv
    xhat = xhat4.reshape(x.shape)
    affine_shape = (channels,) + (1,) * (x.ndim - 1)
    out = xhat * gamma.data.reshape(affine_shape) + beta.data.reshape(affine_shape)

    def backward(g):
        reduce_axes = tuple(range(1, x.ndim))
        ggamma = (g * xhat).sum(axis=reduce_axes)
        gbeta = g.sum(axis=reduce_axes)
        gx_hat = (g * gamma.data.reshape(affine_shape)).reshape(grouped.shape)
        n = grouped.shape[1] * grouped.shape[3]
        gxg = inv * (
            gx_hat
            - gx_hat.mean(axis=(1, 3), keepdims=True)
            - xhat4 * (gx_hat * xhat4).sum(axis=(1, 3), keepdims=True) / n
        )
        return gxg.reshape(x.shape), ggamma, gbeta

    return make_node(out, (x, gamma, beta), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis of token matrices (N, d)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check_same_dtype(x, gamma, beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("gamma/beta must match the trailing extent")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        gxh = g * gamma.data
        gx = inv * (
            gxh
            - gxh.mean(axis=-1, keepdims=True)
            - xhat * (gxh * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def conv_extent(n: int, k: int, s: int, p: int) -> int:
    """floor((n + 2p - k) / s) + 1, rejected when non-positive."""
    out = (n + 2 * p - k) // s + 1
    if out < 1:
        raise ShapeError(
            f"derived extent {out} < 1 for input {n}, kernel {k}, stride {s}, pad {p}"
        )
    return out


def _im2col(xp: np.ndarray, kernel, stride, out_sp) -> np.ndarray:
    """(C, *padded) -> (C * prod(kernel), prod(out_sp)) patch matrix."""
    c = xp.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(
        xp, kernel, axis=tuple(range(1, xp.ndim))
    )
    sl = (slice(None),) + tuple(slice(None, None, s) for s in stride)
    windows = windows[sl]
    nd = len(kernel)
    # (C, out..., k...) -> (C, k..., out...)
    perm = (0,) + tuple(range(1 + nd, 1 + 2 * nd)) + tuple(range(1, 1 + nd))
    cols = windows.transpose(perm).reshape(c * int(np.prod(kernel)), int(np.prod(out_sp)))
    return np.ascontiguousarray(cols)


def _col2im(dcols: np.ndarray, xp_shape, kernel, stride, out_sp) -> np.ndarray:
    """Scatter-add the im2col gradient back onto the padded input."""
    c = xp_shape[0]
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    dcols = dcols.reshape((c,) + tuple(kernel) + tuple(out_sp))
    for offs in np.ndindex(*kernel):
        sl = tuple(
            slice(o, o + s * n, s) for o, s, n in zip(offs, stride, out_sp)
        )
        dxp[(slice(None),) + sl] += dcols[(slice(None),) + offs]
    return dxp


def _convnd(x, weight, bias, stride, padding, temporal_causal: bool) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _check_same_dtype(x, weight, bias)
    nd = x.ndim - 1
    if weight.ndim != nd + 2:
        raise ShapeError(f"weight rank {weight.ndim} does not fit a {nd}d conv")
    c_out, c_in = weight.shape[0], weight.shape[1]
    kernel = weight.shape[2:]
    if x.shape[0] != c_in:
        raise ShapeError(
            f"input has {x.shape[0]} channels but the layer expects {c_in}"
        )
    if bias.shape != (c_out,):
        raise ShapeError("bias must be one value per output channel")

    pads = []
    out_sp = []
    for axis in range(nd):
        n, k, s, p = x.shape[1 + axis], kernel[axis], stride[axis], padding[axis]
        if temporal_causal and axis == 0:
            # all temporal padding sits before t=0; output never sees the future
            pads.append((k - 1, 0))
            out_sp.append((n + (k - 1) - k) // s + 1)
            if out_sp[-1] < 1:
                raise ShapeError(f"causal temporal extent collapsed for input {n}")
        else:
            pads.append((p, p))
            out_sp.append(conv_extent(n, k, s, p))

    xp = np.pad(x.data, [(0, 0)] + pads)
    cols = _im2col(xp, kernel, stride, out_sp)
    w2 = weight.data.reshape(c_out, -1)
    out = (w2 @ cols + bias.data[:, None]).reshape((c_out,) + tuple(out_sp))

    def backward(g):
        g2 = g.reshape(c_out, -1)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gb = g2.sum(axis=1)
        dcols = w2.T @ g2
        dxp = _col2im(dcols, xp.shape, kernel, stride, out_sp)
        unpad = (slice(None),) + tuple(
            slice(lo, dim - hi if hi else None)
            for (lo, hi), dim in zip(pads, dxp.shape[1:])
        )
        return dxp[unpad], gw, gb

    return make_node(out, (x, weight, bias), backward)


def conv3d(x, weight, bias, stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    """3d convolution over (C, T, H, W) with symmetric zero padding."""
    return _convnd(x, weight, bias, stride, padding, temporal_causal=False)


def causal_conv3d(x, weight, bias, stride=(1, 1, 1), padding=(0, 1, 1)) -> Tensor:
    """conv3d whose temporal padding is applied entirely on the past side.

    The temporal component of ``padding`` is ignored; k_t - 1 zeros are
    placed before t=0 so output frame t never depends on later inputs.
    """
    return _convnd(x, weight, bias, stride, padding, temporal_causal=True)


def conv2d(x, weight, bias, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2d convolution over (C, H, W)."""
    return _convnd(x, weight, bias, stride, padding, temporal_causal=False)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the trailing axis: (.., d_in) -> (.., d_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"trailing extent {x.shape[-1]} does not match weight rows {weight.shape[0]}"
        )
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# rotary position encoding and attention
# ---------------------------------------------------------------------------


def rope_angles(
    positions: np.ndarray, pair_dim: int, shift=(0, 0, 0), base: float = 10000.0
) -> np.ndarray:
    """Per-token rotation angles for 3-axis grid positions.

    positions: (N, 3) integer (t, h, w) indices; shift is added per axis.
    Pairs are split between the axes (the temporal axis takes the remainder),
    each with its own geometric frequency ladder. Returns (N, pair_dim).
    """
    positions = np.asarray(positions, dtype=np.float64) + np.asarray(
        shift, dtype=np.float64
    )
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ShapeError("positions must be (N, 3) grid indices")
    n_hw = pair_dim // 3
    counts = (pair_dim - 2 * n_hw, n_hw, n_hw)
    parts = []
    for axis, count in enumerate(counts):
        if count == 0:
            continue
        freqs = base ** (-np.arange(count, dtype=np.float64) / count)
        parts.append(positions[:, axis : axis + 1] * freqs[None, :])
    return np.concatenate(parts, axis=1)


def rope_apply(tokens, angles: np.ndarray) -> Tensor:
    """Rotate interleaved channel pairs of (.., N, d) tokens by per-token angles."""
    tokens = as_tensor(tokens)
    d = tokens.shape[-1]
    if d % 2 != 0:
        raise ShapeError(f"rope needs an even channel extent, got {d}")
    if angles.shape != (tokens.shape[-2], d // 2):
        raise ShapeError(
            f"angle table {angles.shape} does not match tokens {tokens.shape}"
        )
    cos = np.cos(angles).astype(tokens.dtype)
    sin = np.sin(angles).astype(tokens.dtype)

    def rotate(arr, c, s):
        pairs = arr.reshape(arr.shape[:-1] + (d // 2, 2))
        x0, x1 = pairs[..., 0], pairs[..., 1]
        out = np.empty_like(pairs)
        out[..., 0] = x0 * c - x1 * s
        out[..., 1] = x0 * s + x1 * c
        return out.reshape(arr.shape)

    out = rotate(tokens.data, cos, sin)

    def backward(g):
        return (rotate(g, cos, -sin),)  # transpose of a rotation is its inverse

    return make_node(out, (tokens,), backward)


def attention(
    queries,
    keys,
    values,
    heads: int = 1,
    q_angles: np.ndarray | None = None,
    k_angles: np.ndarray | None = None,
) -> Tensor:
    """Scaled dot-product attention; keys/values may outnumber queries.

    queries: (Nq, d), keys/values: (Nk, d). Rotary angle tables, when given,
    are (Nq, d_head/2) and (Nk, d_head/2) and are applied per head. Output
    length always equals the query length.
    """
    q, k, v = as_tensor(queries), as_tensor(keys), as_tensor(values)
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-1] != d:
        raise ShapeError("query/key/value widths differ")
    if k.shape[0] != v.shape[0]:
        raise ShapeError("keys and values must pair up")
    if d % heads != 0:
        raise ShapeError(f"width {d} not divisible into {heads} heads")
    dh = d // heads

    def split(t):  # (N, d) -> (heads, N, dh)
        return transpose(reshape(t, (t.shape[0], heads, dh)), (1, 0, 2))

    qh, kh, vh = split(q), split(k), split(v)
    if q_angles is not None:
        qh = rope_apply(qh, q_angles)
    if k_angles is not None:
        kh = rope_apply(kh, k_angles)
    logits = scale(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
    weights = softmax(logits, axis=-1)
    mixed = matmul(weights, vh)  # (heads, Nq, dh)
    return reshape(transpose(mixed, (1, 0, 2)), (q.shape[0], d))


def patchify3d(latent, weight, bias, kernel=(1, 2, 2)) -> Tensor:
    """Fold a (C, T, H, W) latent into (T*H'*W', d) tokens, (t, h, w) order.

    The projection is a conv with stride equal to the kernel; spatial extents
    must divide evenly.
    """
    latent = as_tensor(latent)
    _, t, h, w = latent.shape
    if h % kernel[1] != 0 or w % kernel[2] != 0 or t % kernel[0] != 0:
        raise ShapeError(
            f"latent grid ({t},{h},{w}) not divisible by patch kernel {kernel}"
        )
    grid = conv3d(latent, weight, bias, stride=kernel, padding=(0, 0, 0))
    d, gt, gh, gw = grid.shape
    return reshape(transpose(grid, (1, 2, 3, 0)), (gt * gh * gw, d))


def unpatchify3d(tokens, grid: tuple[int, int, int], channels: int, kernel=(1, 2, 2)) -> Tensor:
    """Inverse layout of patchify3d for tokens of width channels*prod(kernel)."""
    tokens = as_tensor(tokens)
    gt, gh, gw = grid
    kt, kh, kw = kernel
    if tokens.shape[0] != gt * gh * gw:
        raise ShapeError("token count does not match the grid")
    if tokens.shape[1] != channels * kt * kh * kw:
        raise ShapeError("token width does not match channels * patch volume")
    x = reshape(tokens, (gt, gh, gw, channels, kt, kh, kw))
    x = transpose(x, (3, 0, 4, 1, 5, 2, 6))  # (c, gt, kt, gh, kh, gw, kw)
    return reshape(x, (channels, gt * kt, gh * kh, gw * kw))

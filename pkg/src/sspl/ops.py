"""Differentiable array operations used by the models.

Spatial tensors are channel-first: ``(N, C, H, W)``. Functions that document
an unbatched ``(C, H, W)`` form accept it and return an unbatched result.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, as_tensor, make_result, stop_gradient, unbroadcast

__all__ = [
    "matmul",
    "linear",
    "conv2d",
    "conv_transpose2d",
    "max_pool2d",
    "bilinear_resize",
    "pool_resize",
    "activation",
    "relu",
    "gelu",
    "sigmoid",
    "tanh",
    "softplus",
    "softmax",
    "log_softmax",
    "batch_norm",
    "l2_normalize",
    "cosine_sim",
    "stop_gradient",
]

GELU_C = math.sqrt(2.0 / math.pi)
NORM_EPS = 1e-8


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), back, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    out = matmul(x, weight)
    return out + bias if bias is not None else out


# -- convolution -------------------------------------------------------------


def _out_size(size, k, stride, padding):
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise DimensionError(
            f"conv output size ({size}+2*{padding}-{k})/{stride}+1 is not integral"
        )
    return span // stride + 1


def _im2col(xp, k, stride, ho, wo):
    n, c = xp.shape[:2]
    if k == 1 and stride == 1:
        return xp.reshape(n, c, ho * wo)
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(cols, padded_shape, k, stride, ho, wo):
    n, c = padded_shape[:2]
    if k == 1 and stride == 1 and padded_shape[2:] == (ho, wo):
        return cols.reshape(padded_shape)
    cols = cols.reshape(n, c, k, k, ho, wo)
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[:, :, i, j]
    return xp


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _unpad(x, p):
    return x if p == 0 else x[:, :, p:-p, p:-p]


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")
    return x, False


def conv2d(x, kernels, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` with ``kernels`` of shape (C_out, C_in, k, k)."""
    x, squeeze = _batched(x)
    n, c, h, w = x.shape
    c_out, c_in, k, k2 = kernels.shape
    if c != c_in or k != k2:
        raise DimensionError(f"conv2d input {x.shape} does not match kernels {kernels.shape}")
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    xd, wd = x.data, kernels.data
    cols = _im2col(_pad(xd, padding), k, stride, ho, wo)
    wm = wd.reshape(c_out, -1)
    out = np.matmul(wm, cols).reshape(n, c_out, ho, wo)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def back(g):
        g2 = g.reshape(n, c_out, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = np.matmul(wm.T, g2)
            gx = _unpad(_col2im(dcols, (n, c, h + 2 * padding, w + 2 * padding), k, stride, ho, wo), padding)
        if kernels.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    res = make_result(out, parents, back, "conv2d")
    return res.reshape(res.shape[1:]) if squeeze else res


def conv_transpose2d(x, kernels, bias=None, stride=1, padding=0, output_padding=0):
    """Adjoint of :func:`conv2d` in its input slot.

    ``kernels`` has the conv2d layout (C_x, C_out, k, k): the transpose maps
    C_x channels back to C_out channels.
    """
    x, squeeze = _batched(x)
    n, c, hi, wi = x.shape
    c_x, c_out, k, k2 = kernels.shape
    if c != c_x or k != k2:
        raise DimensionError(f"conv_transpose2d input {x.shape} does not match kernels {kernels.shape}")
    if output_padding >= stride:
        raise DimensionError("output_padding must be smaller than stride")
    h = (hi - 1) * stride - 2 * padding + k + output_padding
    w = (wi - 1) * stride - 2 * padding + k + output_padding
    if h <= 0 or w <= 0:
        raise DimensionError(f"conv_transpose2d output size {h}x{w} is not positive")
    xd, wd = x.data, kernels.data
    wm = wd.reshape(c_x, -1)
    x2 = xd.reshape(n, c, hi * wi)
    cols = np.matmul(wm.T, x2)
    out = _unpad(_col2im(cols, (n, c_out, h + 2 * padding, w + 2 * padding), k, stride, hi, wi), padding)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def back(g):
        gcols = _im2col(_pad(g, padding), k, stride, hi, wi)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(wm, gcols).reshape(xd.shape)
        if kernels.requires_grad:
            gw = np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    res = make_result(out, parents, back, "conv_transpose2d")
    return res.reshape(res.shape[1:]) if squeeze else res


# -- pooling and resizing ----------------------------------------------------


def max_pool2d(x):
    """2x2 max pooling with stride 2; the winning position of each block is recorded."""
    x, squeeze = _batched(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"max_pool2d needs even spatial dims, got {h}x{w}")
    xd = x.data
    corners = [xd[:, :, i::2, j::2] for i in (0, 1) for j in (0, 1)]
    out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))
    # first corner (row-major within the block) attaining the max wins
    winner = np.full(out.shape, 3, dtype=np.int8)
    for k in (2, 1, 0):
        winner[corners[k] == out] = k

    def back(g):
        gx = np.zeros(xd.shape, dtype=g.dtype)
        for k, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            gx[:, :, i::2, j::2] = np.where(winner == k, g, 0)
        return (gx,)

    res = make_result(out, (x,), back, "max_pool2d")
    return res.reshape(res.shape[1:]) if squeeze else res


def interpolation_matrix(n_out, n_in, dtype=np.float64):
    """Row i holds the linear-interpolation weights for output sample i.

    Half-pixel convention: output centre (i + 0.5) / n_out maps to input
    coordinate (i + 0.5) * n_in / n_out - 0.5, clamped at the borders.
    """
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def bilinear_resize(x, size):
    """Resize the last two axes of ``x`` to ``size`` = (height, width)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("bilinear_resize needs at least 2 dims")
    ho, wo = size
    h, w = x.shape[-2:]
    ry = interpolation_matrix(ho, h, x.dtype)
    rx = interpolation_matrix(wo, w, x.dtype)
    out = ry @ x.data @ rx.T
    return make_result(out, (x,), lambda g: (ry.T @ g @ rx,), "bilinear_resize")


def pool_resize(x, mode, size=None):
    if mode == "max_pool_2x2":
        return max_pool2d(x)
    if mode == "bilinear_resize":
        if size is None:
            raise ConfigurationError("bilinear_resize needs a target size")
        return bilinear_resize(x, size)
    raise ConfigurationError(f"unknown pool_resize mode {mode!r}")


# -- activations -------------------------------------------------------------


def relu(x):
    xd = x.data
    return make_result(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),), "relu")


def gelu(x):
    """GELU, tanh approximation."""
    xd = x.data
    sq = xd * xd
    t = np.tanh(GELU_C * xd * (1.0 + 0.044715 * sq))
    out = 0.5 * xd * (1.0 + t)

    def back(g):
        du = GELU_C * (1.0 + 3 * 0.044715 * sq)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return make_result(out, (x,), back, "gelu")


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x):
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(x):
    xd = x.data
    out = np.logaddexp(0, xd).astype(xd.dtype)
    return make_result(out, (x,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * xd)),), "softplus")


def _axes(x, axis):
    if axis is None:
        return tuple(range(x.ndim))
    return (axis,) if isinstance(axis, int) else tuple(axis)


def softmax(x, axis=-1):
    axes = _axes(x, axis)
    xd = x.data
    e = np.exp(xd - xd.max(axis=axes, keepdims=True))
    out = e / e.sum(axis=axes, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axes, keepdims=True)),)

    return make_result(out, (x,), back, "softmax")


def log_softmax(x, axis=-1, mask=None):
    """log-softmax along ``axis``; entries where ``mask`` is False are excluded.

    Excluded entries get output 0 and no gradient.
    """
    xd = x.data
    keep = np.ones(xd.shape, dtype=bool) if mask is None else np.broadcast_to(mask, xd.shape)
    shifted = np.where(keep, xd, -np.inf)
    top = shifted.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0)
    e = np.where(keep, np.exp(np.where(keep, xd, 0) - top), 0)
    total = e.sum(axis=axis, keepdims=True)
    lse = top + np.log(np.where(total > 0, total, 1))
    out = np.where(keep, xd - lse, 0).astype(xd.dtype)
    prob = e / np.where(total > 0, total, 1)

    def back(g):
        g = np.where(keep, g, 0)
        return (g - prob * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), back, "log_softmax")


_ACTIVATIONS = {
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "linear": lambda x: x,
}


def activation(x, kind):
    if kind == "softmax_over_all":
        # all spatial entries of each map
        return softmax(x, axis=(-2, -1))
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None


# -- normalisation -----------------------------------------------------------


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation over every axis except axis 1.

    ``running_mean`` and ``running_var`` are numpy buffers updated in place
    when ``training`` is set.
    """
    xd = x.data
    n = xd.shape[0]
    axes = (0,) + tuple(range(2, xd.ndim))
    bshape = (1, -1) + (1,) * (xd.ndim - 2)
    if training:
        if n < 2:
            raise ConfigurationError(f"batch_norm in training mode needs batch >= 2, got {n}")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = xd.size // xd.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape).astype(xd.dtype)) * inv.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)

    def back(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            if training:
                m = xd.size // xd.shape[1]
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                gx = (dxhat - s1 / m - xhat * (s2 / m)) * inv.reshape(bshape)
            else:
                gx = dxhat * inv.reshape(bshape)
        return gx, gg, gbeta

    return make_result(out, (x, gamma, beta), back, "batch_norm")


def l2_normalize(x, axis=-1, eps=NORM_EPS):
    """``x / (||x|| + eps)`` along ``axis``; the gradient is 0 at the zero vector."""
    x = as_tensor(x)
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    denom = norm + eps
    out = xd / denom

    def back(g):
        safe = np.where(norm > 0, norm, 1)
        dot = (g * xd).sum(axis=axis, keepdims=True)
        return (g / denom - xd * dot / (denom * denom * safe),)

    return make_result(out, (x,), back, "l2_normalize")


def cosine_sim(u, v, axis=-1, eps=NORM_EPS):
    """Cosine similarity along ``axis``, epsilon-guarded so zero vectors give 0."""
    return (l2_normalize(u, axis, eps) * l2_normalize(v, axis, eps)).sum(axis=axis)

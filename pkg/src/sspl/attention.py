"""Audio-visual similarity maps, their scaling, and attention pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, as_tensor, concat

SCALING_METHODS = ("relu", "sigmoid", "softmax", "relu_softmax", "minmax")
FUSION_MODES = ("concat", "multiply", "add", "attention")
MINMAX_EPS = 1e-8


@dataclass
class SimilarityMap:
    values: Tensor
    scaled: Tensor | None = None
    scaling_method: str | None = None


def cosine_map(f_a, f_v):
    """S(i, j) = cos(f_a, f_v[:, i, j]); f_a is (..., C), f_v is (..., C, h, w)."""
    f_a, f_v = as_tensor(f_a), as_tensor(f_v)
    if f_a.shape[-1] != f_v.shape[-3]:
        raise DimensionError(f"channel mismatch: audio {f_a.shape} vs visual {f_v.shape}")
    a = ops.l2_normalize(f_a, axis=-1)
    v = ops.l2_normalize(f_v, axis=-3)
    return (a.reshape(a.shape + (1, 1)) * v).sum(axis=-3)


def similarity_map(f_a, f_v):
    return SimilarityMap(values=cosine_map(f_a, f_v))


def minmax(s):
    """Per-map min-max scaling over the last two axes; a constant map becomes 0.5."""
    lo = s.min(axis=(-2, -1), keepdims=True)
    hi = s.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    flat = (span.data < MINMAX_EPS).astype(s.dtype)
    # constant maps: numerator and gradient both vanish, value pinned to 0.5
    return (s - lo) * (1.0 - flat) / (span + flat) + 0.5 * flat


def scale(s, method="minmax"):
    if method == "minmax":
        return minmax(s)
    if method == "relu":
        return ops.relu(s)
    if method == "sigmoid":
        return ops.sigmoid(s)
    if method == "softmax":
        return ops.softmax(s, axis=(-2, -1))
    if method == "relu_softmax":
        return ops.softmax(ops.relu(s), axis=(-2, -1))
    raise ConfigurationError(f"unknown scaling method {method!r}")


def scale_map(smap, method="minmax"):
    return SimilarityMap(values=smap.values, scaled=scale(smap.values, method), scaling_method=method)


def attend_pool(weights, f_v):
    """f_av[k] = sum_ij weights[i, j] * f_v[k, i, j]."""
    weights, f_v = as_tensor(weights), as_tensor(f_v)
    if weights.shape[-2:] != f_v.shape[-2:]:
        raise DimensionError(f"spatial mismatch: weights {weights.shape} vs features {f_v.shape}")
    c, h, w = f_v.shape[-3:]
    lead = f_v.shape[:-3]
    pooled = ops.matmul(f_v.reshape(lead + (c, h * w)), weights.reshape(lead + (h * w, 1)))
    return pooled.reshape(lead + (c,))


def fuse(f_v, f_a, mode="attention", scaling="minmax", concat_proj=None):
    """Fused c_v-dimensional representation of a visual map and a transformed audio vector.

    Returns ``(fused, raw_similarity)``; the similarity map is produced for
    every mode since it doubles as the localization map.
    """
    s = cosine_map(f_a, f_v)
    if mode == "attention":
        return attend_pool(scale(s, scaling), f_v), s
    a = f_a.reshape(f_a.shape + (1, 1))
    if mode == "add":
        return (f_v + a).mean(axis=(-2, -1)), s
    if mode == "multiply":
        return (f_v * a).mean(axis=(-2, -1)), s
    if mode == "concat":
        if concat_proj is None:
            raise ConfigurationError("concat fusion needs a 1x1 projection")
        tiled = a * Tensor(np.ones((1, 1) + f_v.shape[-2:], dtype=f_v.dtype))
        return concat_proj(concat([f_v, tiled], axis=-3)).mean(axis=(-2, -1)), s
    raise ConfigurationError(f"unknown fusion mode {mode!r}")


def fuse_baseline(f_v, f_a, mode, concat_proj=None, scaling="minmax"):
    return fuse(f_v, f_a, mode, scaling, concat_proj)[0]

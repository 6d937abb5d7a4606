"""Counter-based random streams with a fixed, documented algorithm.

Each stream is a 64-bit key plus a cursor. Draw ``i`` is the SplitMix64
finalizer (xorshift-multiply rounds) applied to ``key + (cursor + i) * GOLDEN``.
Keys are derived by folding integer or string labels into the parent key
with the same finalizer, so ``Stream(seed, index)`` is independent of how
many other samples were generated and in which order. Only uint64 wraparound
arithmetic is involved, so outputs are identical on every platform.
"""

from __future__ import annotations

import zlib

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z):
    """SplitMix64 output function on a uint64 array (wrapping)."""
    z = np.asarray(z, dtype=np.uint64).copy()
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= _M1
        z ^= z >> np.uint64(27)
        z *= _M2
        z ^= z >> np.uint64(31)
    return z


def _label_word(label):
    if isinstance(label, str):
        return zlib.crc32(label.encode()) | (1 << 32)
    return int(label) & _MASK


def derive_key(*labels):
    key = np.zeros(1, dtype=np.uint64)
    for label in labels:
        with np.errstate(over="ignore"):
            key = mix64(key ^ np.uint64(_label_word(label)) + GOLDEN)
    return int(key[0])


class Stream:
    """A splittable random stream keyed by a sequence of labels, e.g. ``(seed, index)``."""

    __slots__ = ("key", "cursor")

    def __init__(self, *labels, cursor=0):
        self.key = derive_key(*labels)
        self.cursor = cursor

    def split(self, *labels):
        """Child stream independent of this one's cursor."""
        child = Stream.__new__(Stream)
        child.key = derive_key(self.key, *labels)
        child.cursor = 0
        return child

    def u64(self, n):
        counters = np.arange(self.cursor, self.cursor + n, dtype=np.uint64)
        self.cursor += n
        with np.errstate(over="ignore"):
            return mix64(np.uint64(self.key) + counters * GOLDEN)

    def uniform(self, size=None, low=0.0, high=1.0):
        """Floats in [low, high) with 53 random bits each."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, mean=0.0, std=1.0):
        """Box-Muller normals; every value consumes two uniforms."""
        n = 1 if size is None else int(np.prod(size))
        u = self.uniform(2 * n)
        radius = np.sqrt(-2.0 * np.log1p(-u[:n]))
        z = mean + std * radius * np.cos(2.0 * np.pi * u[n:])
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low, high, size=None):
        """Integers in [low, high)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(size)
        v = np.floor(low + (high - low) * np.asarray(u)).astype(np.int64)
        v = np.minimum(v, high - 1)
        return int(v) if size is None else v

    def bernoulli(self, p):
        return self.uniform() < p

    def permutation(self, n):
        return np.argsort(self.u64(n), kind="stable")

    def choice(self, items, k):
        """``k`` distinct items, in random order."""
        idx = self.permutation(len(items))[:k]
        return [items[i] for i in idx]

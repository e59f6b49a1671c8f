"""Seeded random streams: xoshiro256** with SplitMix64 seeding.

The generator is implemented on Python ints so that the stream is identical
on every platform; floats are derived from the top 53 bits of each draw.
"""
from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Rng:
    """xoshiro256** stream. Single owner; use :meth:`spawn` for workers."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed) & _MASK
        sm = self.seed
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    def spawn(self, stream: int) -> "Rng":
        """Independent child stream keyed on ``(seed, stream)``; does not advance self."""
        _, a = splitmix64(self.seed)
        _, b = splitmix64(a ^ ((stream * _GOLDEN) & _MASK))
        return Rng(b)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def u64_list(self, n: int) -> list[int]:
        s0, s1, s2, s3 = self._s
        out = [0] * n
        m = _MASK
        for i in range(n):
            x = (s1 * 5) & m
            out[i] = ((((x << 7) | (x >> 57)) & m) * 9) & m
            t = (s1 << 17) & m
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & m
        self._s = [s0, s1, s2, s3]
        return out

    def uniform(self, size=None):
        """Doubles in [0, 1). ``size`` may be None (scalar), an int or a shape."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0**-53
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = math.prod(shape)
        bits = np.array(self.u64_list(n), dtype=np.uint64) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0**-53).reshape(shape)

    def normal(self, size=None):
        """Standard normals by Box-Muller; consumes two draws per pair."""
        if size is None:
            return float(self.normal(1)[0])
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = math.prod(shape)
        u = self.uniform(2 * ((n + 1) // 2)).reshape(-1, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).ravel()
        return z[:n].reshape(shape)

    def integers(self, high: int, size=None):
        """Integers in [0, high)."""
        if high <= 0:
            raise ValueError("high must be positive")
        if size is None:
            return int(self.uniform() * high)
        return np.floor(self.uniform(size) * high).astype(np.int64)

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """One draw per row of a (B, K) probability matrix by inverse CDF."""
        probs = np.atleast_2d(probs)
        u = self.uniform(probs.shape[0])
        cdf = np.cumsum(probs, axis=1)
        # v in [cdf[k-1], cdf[k]) selects k, which can only happen when probs[k] > 0
        idx = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=1)
        return np.minimum(idx, probs.shape[1] - 1)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.uniform(n)
        return np.argsort(keys, kind="stable")

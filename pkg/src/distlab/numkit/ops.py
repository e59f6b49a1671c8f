"""Stable softmax helpers, finite-difference checking and flat-vector plumbing."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def log_softmax(logits, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(logits, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def finite_diff_check(f: Callable[[np.ndarray], float], point, analytic_grad,
                      h: float = 1e-5) -> float:
    """Max over coordinates of |central difference - g_i| / max(1, |g_i|)."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(point, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    flat = x.ravel()
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        err = abs((fp - fm) / (2 * h) - g[i]) / max(1.0, abs(g[i]))
        worst = max(worst, err)
    return worst


def flatten(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])


def assign_flat(arrays: Sequence[np.ndarray], flat: np.ndarray) -> None:
    """Write ``flat`` back into ``arrays`` in place."""
    i = 0
    for a in arrays:
        n = a.size
        a[...] = flat[i:i + n].reshape(a.shape)
        i += n
    if i != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, arrays hold {i}")


def global_norm(arrays: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def clip_global_norm(arrays: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their joint norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    norm = global_norm(arrays)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for a in arrays:
            a *= scale
    return norm

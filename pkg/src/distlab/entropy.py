"""Adaptive entropy bonus: token entropies, warmup/flat/cosine schedule, deadband feedback."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class EntropyConfig:
    target: float = 0.78
    deadband: float = 0.015
    gain: float = 3.0
    c0: float = 2.2e-3
    c_min: float = 7e-5
    c_max: float = 4e-3
    warmup_end: float = 0.05
    flat_end: float = 0.85
    enabled: bool = True

    def __post_init__(self):
        if not 0 < self.c_min <= self.c0 <= self.c_max:
            raise ValueError("need 0 < c_min <= c0 <= c_max")
        if not 0.0 <= self.target <= 1.0:
            raise ValueError("target must lie in [0, 1]")
        if self.deadband < 0:
            raise ValueError("deadband must be >= 0")
        if not 0.0 < self.warmup_end < self.flat_end < 1.0:
            raise ValueError("need 0 < warmup_end < flat_end < 1")


def token_entropy(probs, atol: float = 1e-9) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise ValueError("probs must be a non-negative vector summing to 1")
    nz = p[p > 0]
    return float(max(-np.sum(nz * np.log(nz)), 0.0))


def entropy_from_logits(logits: np.ndarray):
    """Entropy of softmax(logits) along the last axis, plus dH/dlogits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(logp)
    h = -np.sum(p * logp, axis=-1)
    grad = -p * (logp + h[..., None])
    return h, grad


def normalized_entropy_fraction(per_token_h, vocab_size: int) -> float:
    """Mean of H_t / log K; a (B, T) input is averaged per example, then over the batch."""
    if vocab_size < 2:
        raise ValueError("vocabulary size must be >= 2")
    h = np.asarray(per_token_h, dtype=np.float64)
    if h.size == 0:
        raise ValueError("empty entropy sequence")
    h_max = math.log(vocab_size)
    if np.any(h < -1e-12) or np.any(h > h_max + 1e-9):
        raise ValueError("token entropies must lie in [0, log K]")
    per_example = np.atleast_2d(h).mean(axis=-1) / h_max
    return float(per_example.mean())


def c_sched(p: float, cfg: EntropyConfig) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"training progress must lie in [0, 1], got {p}")
    if p <= cfg.warmup_end:
        return cfg.c0 * p / cfg.warmup_end
    if p <= cfg.flat_end:
        return cfg.c0
    frac = (p - cfg.flat_end) / (1.0 - cfg.flat_end)
    return cfg.c_min + (cfg.c0 - cfg.c_min) * 0.5 * (1.0 + math.cos(math.pi * frac))


def c_eff(p: float, h_hat: float, cfg: EntropyConfig) -> float:
    if not 0.0 <= h_hat <= 1.0:
        raise ValueError(f"normalized entropy must lie in [0, 1], got {h_hat}")
    base = c_sched(p, cfg)
    err = cfg.target - h_hat
    if abs(err) <= cfg.deadband:
        return base
    return min(max(base * math.exp(cfg.gain * err), cfg.c_min), cfg.c_max)

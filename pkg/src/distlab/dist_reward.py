"""Diagonal-FID moments and leave-one-out rewards, with EMA moment tracking.

All moments are diagonal: a mean vector and a per-dimension standard
deviation.  Variances are formed from raw second moments and floored,

    sigma = sqrt(max(m2 - mu*mu, 0) + eps_var)

so that a per-sample leave-one-out estimate costs O(N*D) in total: the sums
S1 and S2 are computed once and each sample is subtracted out.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import atomic_write_text

EPS_VAR = 1e-6
# above this dimension fid_diag switches to exactly rounded summation
FSUM_MIN_DIM = 1024


@dataclass(frozen=True)
class MomentPair:
    mu: np.ndarray
    sigma: np.ndarray
    m2: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


@dataclass(frozen=True)
class LooMoments:
    """Stacked leave-one-out moments: row i excludes sample i."""
    mu: np.ndarray
    m2: np.ndarray
    sigma: np.ndarray

    def __len__(self) -> int:
        return self.mu.shape[0]

    def __getitem__(self, i: int) -> MomentPair:
        return MomentPair(self.mu[i], self.sigma[i], self.m2[i])


def _as_batch(batch, min_rows: int) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"feature batch must be 2-D (N, D), got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature batch contains non-finite entries")
    return x


def sigma_from_raw(mu: np.ndarray, m2: np.ndarray, eps_var: float = EPS_VAR) -> np.ndarray:
    return np.sqrt(np.maximum(m2 - mu * mu, 0.0) + eps_var)


def batch_moments(batch, eps_var: float = EPS_VAR) -> MomentPair:
    x = _as_batch(batch, 1)
    n = x.shape[0]
    mu = x.sum(axis=0) / n
    m2 = (x * x).sum(axis=0) / n
    return MomentPair(mu, sigma_from_raw(mu, m2, eps_var), m2)


def _sq_norm_rows(d: np.ndarray) -> np.ndarray | float:
    if d.shape[-1] < FSUM_MIN_DIM:
        return np.sum(d * d, axis=-1)
    sq = d * d
    if sq.ndim == 1:
        return math.fsum(sq)
    return np.array([math.fsum(row) for row in sq])


def fid_diag(ref: MomentPair, gen: MomentPair) -> float:
    """||mu_r - mu||^2 + ||sigma_r - sigma||^2."""
    if ref.mu.shape != gen.mu.shape or ref.sigma.shape != gen.sigma.shape:
        raise ValueError(f"dimension mismatch: {ref.mu.shape} vs {gen.mu.shape}")
    return float(_sq_norm_rows(ref.mu - gen.mu) + _sq_norm_rows(ref.sigma - gen.sigma))


def _fid_rows(ref: MomentPair, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    if mu.shape[-1] != ref.dim:
        raise ValueError(f"dimension mismatch: reference D={ref.dim}, batch D={mu.shape[-1]}")
    return _sq_norm_rows(ref.mu - mu) + _sq_norm_rows(ref.sigma - sigma)


def loo_moments(batch, eps_var: float = EPS_VAR) -> LooMoments:
    x = _as_batch(batch, 2)
    n = x.shape[0]
    s1 = x.sum(axis=0)
    s2 = (x * x).sum(axis=0)
    mu = (s1[None, :] - x) / (n - 1)
    m2 = (s2[None, :] - x * x) / (n - 1)
    return LooMoments(mu, m2, sigma_from_raw(mu, m2, eps_var))


def loo_batch_rewards(batch, ref: MomentPair, eps_var: float = EPS_VAR) -> np.ndarray:
    """r_i = F(without x_i) - F(full batch). Positive: removing x_i hurts, x_i helps."""
    full = batch_moments(batch, eps_var)
    loo = loo_moments(batch, eps_var)
    return _fid_rows(ref, loo.mu, loo.sigma) - fid_diag(ref, full)


@dataclass(frozen=True)
class EmaMomentState:
    mu: np.ndarray | None = None
    m2: np.ndarray | None = None
    alpha: float = 0.5
    eps_var: float = EPS_VAR
    initialized: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"EMA decay must lie in (0, 1), got {self.alpha}")
        if self.eps_var <= 0:
            raise ValueError("eps_var must be positive")

    @property
    def sigma(self) -> np.ndarray:
        return sigma_from_raw(self.mu, self.m2, self.eps_var)

    def moments(self) -> MomentPair:
        return MomentPair(self.mu, self.sigma, self.m2)


def _ema_blend(state: EmaMomentState, mu, m2):
    """Returns the would-be (mu, m2) after absorbing batch moments; rows allowed."""
    if not state.initialized:
        # cold start: first batch is adopted verbatim
        return mu, m2
    a = state.alpha
    return (1.0 - a) * state.mu + a * mu, (1.0 - a) * state.m2 + a * m2


def ema_update(state: EmaMomentState, batch_mu, batch_m2) -> EmaMomentState:
    batch_mu = np.asarray(batch_mu, dtype=np.float64)
    batch_m2 = np.asarray(batch_m2, dtype=np.float64)
    if batch_mu.shape != batch_m2.shape:
        raise ValueError("batch mean and second moment differ in shape")
    if state.initialized and batch_mu.shape != state.mu.shape:
        raise ValueError(f"dimension mismatch: state D={state.mu.shape}, batch D={batch_mu.shape}")
    mu, m2 = _ema_blend(state, batch_mu, batch_m2)
    return EmaMomentState(mu, m2, state.alpha, state.eps_var, True)


def ema_loo_rewards(state: EmaMomentState, batch, ref: MomentPair):
    """Per-sample change in EMA-aligned FID when the sample is left out.

    Returns ``(rewards, next_state)``.  ``next_state`` is the ordinary
    full-batch update; the leave-one-out updates are hypothetical.
    """
    x = _as_batch(batch, 2)
    full = batch_moments(x, state.eps_var)
    nxt = ema_update(state, full.mu, full.m2)
    f_full = fid_diag(ref, nxt.moments())
    loo = loo_moments(x, state.eps_var)
    mu_i, m2_i = _ema_blend(state, loo.mu, loo.m2)
    f_loo = _fid_rows(ref, mu_i, sigma_from_raw(mu_i, m2_i, state.eps_var))
    return f_loo - f_full, nxt


def reference_moments_from_samples(samples, eps_var: float = EPS_VAR) -> MomentPair:
    x = _as_batch(samples, 2)
    return batch_moments(x, eps_var)


def save_reference(path, ref: MomentPair, source: str, n_samples: int) -> None:
    doc = {"dim": int(ref.dim), "mu": ref.mu.tolist(), "sigma": ref.sigma.tolist(),
           "source": source, "n_samples": int(n_samples)}
    atomic_write_text(Path(path), json.dumps(doc, indent=1))


def load_reference(path) -> tuple[MomentPair, dict]:
    doc = json.loads(Path(path).read_text())
    mu = np.asarray(doc["mu"], dtype=np.float64)
    sigma = np.asarray(doc["sigma"], dtype=np.float64)
    if mu.shape != (doc["dim"],) or sigma.shape != (doc["dim"],):
        raise ValueError(f"{path}: mu/sigma do not match dim={doc['dim']}")
    return MomentPair(mu, sigma), {"source": doc.get("source", ""),
                                   "n_samples": doc.get("n_samples", 0)}

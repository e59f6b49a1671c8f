"""Group-relative policy optimization: advantages, ratios, clipped loss, KL.

The loss is written in terms of per-token log-probabilities and per-token
entropies so that callers can chain its gradients into any policy:

    loss = mean_j[-min(rho_j A_j, clip(rho_j) A_j)]
           - c_eff * mean_{j,t} H_{j,t}
           + beta * mean_j[exp(D_j) - D_j - 1],   D_j = mean_t(logp_ref - logp)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ADV_EPS = 1e-4


@dataclass(frozen=True)
class RewardBreakdown:
    r_align: float
    r_pref: float
    r_dist: float
    w_align: float = 1.0
    w_pref: float = 1.0
    w_dist: float = 1.0

    def total(self) -> float:
        return self.w_align * self.r_align + self.w_pref * self.r_pref + self.w_dist * self.r_dist


def composite_rewards(r_align, r_pref, r_dist, w_align=1.0, w_pref=1.0, w_dist=1.0) -> np.ndarray:
    """Vectorized :meth:`RewardBreakdown.total`."""
    return (w_align * np.asarray(r_align, dtype=np.float64)
            + w_pref * np.asarray(r_pref, dtype=np.float64)
            + w_dist * np.asarray(r_dist, dtype=np.float64))


@dataclass
class GrpoConfig:
    group_size: int = 12
    epochs: int = 1
    clip_eps: float = 0.2
    kl_beta: float = 3.0
    adv_eps: float = ADV_EPS
    ratio_mode: str = "mean"  # "mean": exp of mean-token log-ratio; "product": full sequence ratio
    w_align: float = 1.0
    w_pref: float = 1.0
    w_dist: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if self.adv_eps <= 0:
            raise ValueError("adv_eps must be > 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.ratio_mode not in ("mean", "product"):
            raise ValueError(f"ratio_mode must be 'mean' or 'product', got {self.ratio_mode!r}")


def group_advantages(rewards, adv_eps: float = ADV_EPS) -> np.ndarray:
    """(r - mean) / (population std + adv_eps)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError(f"need a group of at least 2 rewards, got shape {r.shape}")
    if adv_eps <= 0:
        raise ValueError("adv_eps must be > 0")
    centered = r - r.mean()
    return centered / (np.sqrt(np.mean(centered * centered)) + adv_eps)


def _check_finite(*xs):
    for x in xs:
        if not math.isfinite(x):
            raise ValueError(f"non-finite input {x}")


def sequence_ratio(mean_logp_new: float, mean_logp_old: float) -> float:
    _check_finite(mean_logp_new, mean_logp_old)
    return math.exp(mean_logp_new - mean_logp_old)


def clipped_surrogate(rho: float, adv: float, clip_eps: float) -> float:
    if not 0.0 < clip_eps < 1.0:
        raise ValueError(f"clip_eps must lie in (0, 1), got {clip_eps}")
    if not rho > 0:
        raise ValueError("ratio must be positive")
    clipped = min(max(rho, 1.0 - clip_eps), 1.0 + clip_eps)
    return -min(rho * adv, clipped * adv)


def approx_kl(mean_logp_ref: float, mean_logp_new: float) -> float:
    _check_finite(mean_logp_ref, mean_logp_new)
    d = mean_logp_ref - mean_logp_new
    return math.expm1(d) - d


@dataclass
class GroupBatch:
    """Rollouts of one optimization step; may hold several groups.

    ``logp`` is the current policy's per-token log-probs, ``logp_old`` the
    snapshot cached before the epochs, ``logp_ref`` the frozen reference (or
    None).  ``advantages`` are normalized within each group.
    """
    rewards: np.ndarray
    advantages: np.ndarray
    logp: np.ndarray
    logp_old: np.ndarray
    entropy: np.ndarray
    logp_ref: np.ndarray | None = None
    group_ids: np.ndarray | None = None

    @classmethod
    def from_rewards(cls, rewards, logp, logp_old, entropy, logp_ref=None, group_ids=None,
                     adv_eps: float = ADV_EPS) -> "GroupBatch":
        rewards = np.asarray(rewards, dtype=np.float64)
        if group_ids is None:
            adv = group_advantages(rewards, adv_eps)
        else:
            group_ids = np.asarray(group_ids)
            adv = np.empty_like(rewards)
            for g in np.unique(group_ids):
                sel = group_ids == g
                adv[sel] = group_advantages(rewards[sel], adv_eps)
        return cls(rewards, adv, np.atleast_2d(logp), np.atleast_2d(logp_old),
                   np.atleast_2d(entropy), None if logp_ref is None else np.atleast_2d(logp_ref),
                   group_ids)


@dataclass
class GrpoLoss:
    loss: float
    surrogate: float
    entropy_mean: float
    kl_mean: float
    ratio_mean: float
    clip_frac: float
    grad_logp: np.ndarray = field(repr=False)
    grad_entropy: np.ndarray = field(repr=False)

    def diagnostics(self) -> dict:
        return {"loss": self.loss, "surrogate": self.surrogate, "entropy_mean": self.entropy_mean,
                "kl_mean": self.kl_mean, "ratio_mean": self.ratio_mean, "clip_frac": self.clip_frac}


def grpo_loss(batch: GroupBatch, cfg: GrpoConfig, c_eff: float) -> GrpoLoss:
    """Loss value, per-term diagnostics and gradients w.r.t. logp and entropy."""
    logp, logp_old = batch.logp, batch.logp_old
    if logp.shape != logp_old.shape or logp.shape != batch.entropy.shape:
        raise ValueError("logp, logp_old and entropy must share shape (G, T)")
    n, t = logp.shape
    adv = batch.advantages
    if cfg.ratio_mode == "mean":
        log_ratio = logp.mean(axis=1) - logp_old.mean(axis=1)
        dlogratio_dlogp = 1.0 / t
    else:
        log_ratio = logp.sum(axis=1) - logp_old.sum(axis=1)
        dlogratio_dlogp = 1.0
    rho = np.exp(log_ratio)
    if not np.all(np.isfinite(rho)):
        raise FloatingPointError("probability ratio overflowed")
    clipped = np.clip(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    unclipped_obj = rho * adv
    clipped_obj = clipped * adv
    surrogate_terms = -np.minimum(unclipped_obj, clipped_obj)
    # gradient flows only where the unclipped branch attains the min
    active = unclipped_obj <= clipped_obj
    d_rho = np.where(active, -adv, 0.0) / n
    g_seq = d_rho * rho * dlogratio_dlogp

    ent_mean = float(batch.entropy.mean())
    grad_entropy = np.full_like(batch.entropy, -c_eff / batch.entropy.size)

    kl_mean = 0.0
    if cfg.kl_beta > 0 and batch.logp_ref is not None:
        delta = batch.logp_ref.mean(axis=1) - logp.mean(axis=1)
        kl_mean = float(np.mean(np.expm1(delta) - delta))
        # d/d(mean logp) of e^D - D - 1 with D = ref - mean logp
        g_seq = g_seq - np.expm1(delta) * cfg.kl_beta / (n * t)
    grad_logp = np.repeat(g_seq[:, None], t, axis=1)

    surrogate = float(surrogate_terms.mean())
    loss = surrogate - c_eff * ent_mean + cfg.kl_beta * kl_mean
    clip_frac = float(np.mean(np.abs(rho - 1.0) > cfg.clip_eps))
    return GrpoLoss(loss, surrogate, ent_mean, kl_mean, float(rho.mean()), clip_frac,
                    grad_logp, grad_entropy)

"""2-D diagonal-Gaussian policy conditioned on a latent, and the line dataset it learns."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..numkit import MlpParams, Rng, init_mlp, mlp_backward, mlp_forward

LOG_SIGMA_MIN = -6.0
LOG_SIGMA_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def line_dataset(n: int, seed: int, noise: float = 0.05, half_length: float = 1.0) -> np.ndarray:
    """Points p*(1, 1) + eta with p ~ U(-half_length, half_length), eta ~ N(0, noise^2 I)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = Rng(seed)
    p = (2.0 * rng.uniform(n) - 1.0) * half_length
    eta = rng.normal((n, 2)) * noise
    return p[:, None] * np.ones((1, 2)) + eta


@dataclass
class Gaussian2dPolicy:
    mlp: MlpParams

    @property
    def latent_dim(self) -> int:
        return self.mlp.n_in

    @classmethod
    def init(cls, rng: Rng, latent_dim: int = 8, hidden: tuple[int, ...] = (64,)) -> "Gaussian2dPolicy":
        return cls(init_mlp([latent_dim, *hidden, 4], rng))

    def arrays(self) -> list[np.ndarray]:
        return self.mlp.arrays()

    def copy(self) -> "Gaussian2dPolicy":
        return Gaussian2dPolicy(self.mlp.copy())

    def heads(self, z):
        """Mean and clamped log-std for latents ``z`` of shape (d_z,) or (B, d_z)."""
        out = mlp_forward(self.mlp, z)
        return out[..., :2], np.clip(out[..., 2:], LOG_SIGMA_MIN, LOG_SIGMA_MAX)

    def backward_heads(self, z, g_mu, g_log_sigma) -> list[np.ndarray]:
        """Parameter gradients given gradients on (mu, clamped log sigma), batched."""
        raw = mlp_forward(self.mlp, z)[..., 2:]
        inside = (raw > LOG_SIGMA_MIN) & (raw < LOG_SIGMA_MAX)
        g = np.concatenate([g_mu, np.where(inside, g_log_sigma, 0.0)], axis=-1)
        grads, _ = mlp_backward(self.mlp, z, g)
        return grads.arrays()

    def to_dict(self) -> dict:
        return {"kind": "gaussian2d", "mlp": self.mlp.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Gaussian2dPolicy":
        return cls(MlpParams.from_dict(doc["mlp"]))


def gaussian_sample(policy: Gaussian2dPolicy, z, noise) -> np.ndarray:
    """x = mu(z) + sigma(z) * noise."""
    z = np.asarray(z, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != 2 or noise.shape[:-1] != z.shape[:-1]:
        raise ValueError(f"noise shape {noise.shape} does not match latents {z.shape}")
    mu, log_sigma = policy.heads(z)
    return mu + np.exp(log_sigma) * noise


def gaussian_logprob(policy: Gaussian2dPolicy, z, x):
    """Diagonal-Gaussian log density of ``x`` given ``z``; scalar or (B,)."""
    x = np.asarray(x, dtype=np.float64)
    mu, log_sigma = policy.heads(z)
    if x.shape != mu.shape:
        raise ValueError(f"point shape {x.shape} does not match mean shape {mu.shape}")
    u = (x - mu) * np.exp(-log_sigma)
    return np.sum(-log_sigma - 0.5 * u * u - _HALF_LOG_2PI, axis=-1)


def gaussian_logprob_grad(policy: Gaussian2dPolicy, z, x, weights) -> list[np.ndarray]:
    """Gradient of sum_n weights[n] * logp(x_n | z_n) w.r.t. the parameters."""
    z = np.atleast_2d(z)
    x = np.atleast_2d(x)
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    mu, log_sigma = policy.heads(z)
    inv_var = np.exp(-2.0 * log_sigma)
    d = x - mu
    g_mu = w * d * inv_var
    g_ls = w * (d * d * inv_var - 1.0)
    return policy.backward_heads(z, g_mu, g_ls)


def gaussian_entropy(policy: Gaussian2dPolicy, z) -> np.ndarray:
    _, log_sigma = policy.heads(z)
    return np.sum(log_sigma + 0.5 + _HALF_LOG_2PI, axis=-1)


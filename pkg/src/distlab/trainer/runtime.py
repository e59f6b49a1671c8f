"""Environment adapters used by the training loops.

Both adapters expose the same duck-typed surface:

    init_policy(rng)                  fresh policy
    rollout(policy, rng, n_per_group) Rollouts (one group per class for AR)
    score(policy, rollouts)           (logp (B, T), entropy (B, T), handle)
    backward(policy, handle, g_logp, g_entropy) -> gradient arrays
    features(rollouts)                (B, D) feature batch
    instance_rewards(rollouts, feats) (align, pref)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..dist_reward import MomentPair, reference_moments_from_samples
from ..envs import ar as arenv
from ..envs.ar import ArPolicy, SamplerConfig
from ..envs.synthetic import Corpus, FeatureEmbedder, align_reward, make_corpus, pref_reward
from ..envs.toy2d import (Gaussian2dPolicy, gaussian_entropy, gaussian_logprob,
                          gaussian_logprob_grad, line_dataset)
from ..numkit import Rng, clip_global_norm
from .config import ArConfig, ExperimentConfig, Toy2dConfig


@dataclass
class Rollouts:
    group_ids: np.ndarray
    logp: np.ndarray
    entropy: np.ndarray
    tokens: np.ndarray | None = None
    classes: np.ndarray | None = None
    z: np.ndarray | None = None
    noise: np.ndarray | None = None
    points: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.group_ids)


class Toy2dEnv:
    name = "toy2d"
    vocab = None

    def __init__(self, cfg: Toy2dConfig, eps_var: float = 1e-6):
        self.cfg = cfg
        self.reference_points = line_dataset(cfg.n_reference, cfg.reference_seed, cfg.line_noise)
        self.reference = reference_moments_from_samples(self.reference_points, eps_var)

    def init_policy(self, rng: Rng) -> Gaussian2dPolicy:
        return Gaussian2dPolicy.init(rng, self.cfg.latent_dim, tuple(self.cfg.hidden))

    def rollout(self, policy: Gaussian2dPolicy, rng: Rng, n: int, iteration: int = 0) -> Rollouts:
        z = rng.normal((n, policy.latent_dim))
        eps = rng.normal((n, 2))
        mu, log_sigma = policy.heads(z)
        x = mu + np.exp(log_sigma) * eps
        logp = gaussian_logprob(policy, z, x)[:, None]
        ent = gaussian_entropy(policy, z)[:, None]
        return Rollouts(np.zeros(n, dtype=np.int64), logp, ent, z=z, noise=eps, points=x)

    def score(self, policy: Gaussian2dPolicy, ro: Rollouts):
        logp = gaussian_logprob(policy, ro.z, ro.points)[:, None]
        return logp, gaussian_entropy(policy, ro.z)[:, None], None

    def backward(self, policy: Gaussian2dPolicy, ro: Rollouts, handle, g_logp, g_entropy):
        return gaussian_logprob_grad(policy, ro.z, ro.points, np.asarray(g_logp)[:, 0])

    def features(self, ro: Rollouts) -> np.ndarray:
        return ro.points

    def instance_rewards(self, ro: Rollouts, feats):
        n = len(ro)
        return np.zeros(n), np.zeros(n)

    def entropy_fraction(self, entropy) -> float:
        return 0.0


class ArEnv:
    name = "ar"

    def __init__(self, cfg: ArConfig, sampler: SamplerConfig, eps_var: float = 1e-6):
        self.cfg = cfg
        self.sampler = sampler
        self.vocab = cfg.vocab
        self.corpus: Corpus = make_corpus(cfg.n_classes, cfg.vocab, cfg.seq_len,
                                          cfg.corpus_per_class, cfg.corpus_noise, cfg.corpus_seed)
        self.embedder = FeatureEmbedder(cfg.vocab, cfg.feature_dim, cfg.feature_seed,
                                        cfg.feature_scale)
        self.templates = self.embedder(self.corpus.templates)
        self.reference: MomentPair = reference_moments_from_samples(
            self.embedder(self.corpus.tokens), eps_var)

    def init_policy(self, rng: Rng) -> ArPolicy:
        c = self.cfg
        return ArPolicy.init(rng, c.vocab, c.seq_len, c.n_classes, c.window, c.emb_dim,
                             tuple(c.hidden))

    def iteration_classes(self, iteration: int) -> np.ndarray:
        c = self.cfg
        start = (iteration * c.classes_per_iter) % c.n_classes
        return (start + np.arange(c.classes_per_iter)) % c.n_classes

    def rollout(self, policy: ArPolicy, rng: Rng, n_per_group: int, iteration: int = 0) -> Rollouts:
        classes = np.repeat(self.iteration_classes(iteration), n_per_group)
        rb = arenv.sample_batch(policy, classes, self.sampler, rng)
        return Rollouts(np.repeat(np.arange(self.cfg.classes_per_iter), n_per_group),
                        rb.logp, rb.entropy, tokens=rb.tokens, classes=rb.classes)

    def score(self, policy: ArPolicy, ro: Rollouts, sampler: SamplerConfig | None = None):
        s = arenv.score(policy, ro.classes, ro.tokens, sampler or self.sampler)
        return s.logp, s.entropy, s

    def backward(self, policy: ArPolicy, ro: Rollouts, handle, g_logp, g_entropy):
        return arenv.score_backward(policy, handle, g_logp, g_entropy)

    def features(self, ro: Rollouts) -> np.ndarray:
        return self.embedder(ro.tokens)

    def instance_rewards(self, ro: Rollouts, feats):
        return align_reward(feats, ro.classes, self.templates), pref_reward(ro.tokens, self.vocab)

    def entropy_fraction(self, entropy) -> float:
        return float(np.mean(entropy) / math.log(self.vocab))


def mle_step(env: ArEnv, policy: ArPolicy, rng: Rng, lr: float, grad_clip: float,
             batch: int, class_dropout: float) -> float:
    """One teacher-forced cross-entropy SGD step on a corpus minibatch. Returns the loss."""
    corpus = env.corpus
    idx = rng.integers(len(corpus.tokens), batch)
    tokens = corpus.tokens[idx]
    classes = corpus.classes[idx].copy()
    if class_dropout > 0:
        classes[rng.uniform(batch) < class_dropout] = policy.null_class
    plain = SamplerConfig(1.0, 0, 1.0, 1.0)
    scored = arenv.score(policy, classes, tokens, plain)
    loss = -float(scored.logp.mean())
    g = np.full(scored.logp.shape, -1.0 / scored.logp.size)
    grads = arenv.score_backward(policy, scored, g)
    clip_global_norm(grads, grad_clip)
    for p, gp in zip(policy.arrays(), grads):
        p -= lr * gp
    return loss


@lru_cache(maxsize=8)
def _pretrained_cached(key: str) -> ArPolicy:
    cfg = ExperimentConfig.from_dict(json.loads(key))
    return _pretrain(cfg)


def _pretrain(cfg: ExperimentConfig) -> ArPolicy:
    env = ArEnv(cfg.ar, cfg.sampler, cfg.eps_var)
    root = Rng(cfg.seed)
    policy = env.init_policy(root.spawn(0))
    rng = root.spawn(1)
    n = cfg.ar.pretrain_iterations
    for i in range(n):
        frac = i / max(n - 1, 1)
        lr = cfg.ar.pretrain_lr + frac * (cfg.ar.pretrain_lr_final - cfg.ar.pretrain_lr)
        mle_step(env, policy, rng, lr, cfg.grad_clip, cfg.ar.mle_batch, cfg.ar.class_dropout)
    return policy


def pretrained_policy(cfg: ExperimentConfig) -> ArPolicy:
    """Deterministic 'pretrained' starting point: MLE on the synthetic corpus from scratch.

    Depends only on the seed and the AR settings; memoized per process.
    """
    key = ExperimentConfig(env="ar", seed=cfg.seed, grad_clip=cfg.grad_clip,
                           eps_var=cfg.eps_var, ar=cfg.ar).to_json()
    return _pretrained_cached(key).copy()

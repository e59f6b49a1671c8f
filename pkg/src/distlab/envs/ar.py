"""Tiny class-conditional autoregressive token policy.

Next-token logits come from an MLP over

    [class embedding | embeddings of the last `window` tokens | one-hot position]

A reserved row of the class table is the null class used by the
unconditional branch of classifier-free guidance, and a reserved row of the
token table pads histories shorter than the window.

Sampling and scoring share one effective distribution per step:

    z = l_uncond + s * (l_cond - l_uncond)      (z = l_cond when s == 1)
    q = softmax over the top-k / top-p survivors of z / temperature

Log-probs are taken under ``q``; the entropy fed to the entropy controller is
that of softmax(z), before temperature and truncation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..entropy import entropy_from_logits
from ..numkit import MlpParams, Rng, init_mlp, mlp_backward, mlp_forward


@dataclass
class SamplerConfig:
    temperature: float = 1.0
    top_k: int = 0
    top_p: float = 1.0
    cfg_scale: float = 1.5
    greedy: bool = False

    def validate(self, vocab: int | None = None) -> None:
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.top_k < 0 or (vocab is not None and self.top_k > vocab):
            raise ValueError(f"top_k must lie in [0, {vocab}]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must lie in (0, 1]")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")


@dataclass
class ArPolicy:
    mlp: MlpParams
    class_emb: np.ndarray  # (C + 1, e), last row = null class
    token_emb: np.ndarray  # (K + 1, e), last row = padding
    seq_len: int
    window: int

    @property
    def vocab(self) -> int:
        return self.token_emb.shape[0] - 1

    @property
    def n_classes(self) -> int:
        return self.class_emb.shape[0] - 1

    @property
    def null_class(self) -> int:
        return self.n_classes

    @property
    def emb_dim(self) -> int:
        return self.class_emb.shape[1]

    @classmethod
    def init(cls, rng: Rng, vocab: int = 16, seq_len: int = 16, n_classes: int = 8,
             window: int = 4, emb_dim: int = 8, hidden: tuple[int, ...] = (64,)) -> "ArPolicy":
        n_in = emb_dim * (1 + window) + seq_len
        mlp = init_mlp([n_in, *hidden, vocab], rng)
        class_emb = 2.0 * rng.uniform((n_classes + 1, emb_dim)) - 1.0
        token_emb = 2.0 * rng.uniform((vocab + 1, emb_dim)) - 1.0
        return cls(mlp, class_emb, token_emb, seq_len, window)

    def arrays(self) -> list[np.ndarray]:
        return self.mlp.arrays() + [self.class_emb, self.token_emb]

    def copy(self) -> "ArPolicy":
        return ArPolicy(self.mlp.copy(), self.class_emb.copy(), self.token_emb.copy(),
                        self.seq_len, self.window)

    def to_dict(self) -> dict:
        return {"kind": "ar", "mlp": self.mlp.to_dict(), "seq_len": self.seq_len,
                "window": self.window, "class_emb": self.class_emb.tolist(),
                "token_emb": self.token_emb.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ArPolicy":
        return cls(MlpParams.from_dict(doc["mlp"]), np.asarray(doc["class_emb"], dtype=np.float64),
                   np.asarray(doc["token_emb"], dtype=np.float64), int(doc["seq_len"]),
                   int(doc["window"]))

    # -- inputs ---------------------------------------------------------------

    def history(self, tokens: np.ndarray) -> np.ndarray:
        """(B, T, w) indices of the previous ``window`` tokens, padded."""
        b, t = tokens.shape
        padded = np.concatenate([np.full((b, self.window), self.vocab), tokens], axis=1)
        cols = np.arange(t)[:, None] + np.arange(self.window)[None, :]
        return padded[:, cols]

    def inputs(self, classes: np.ndarray, hist: np.ndarray, positions: np.ndarray) -> np.ndarray:
        """Network inputs (B, P, n_in) for history indices (B, P, w) at ``positions``."""
        b, p, w = hist.shape
        e = self.emb_dim
        cls_part = np.broadcast_to(self.class_emb[classes][:, None, :], (b, p, e))
        tok_part = self.token_emb[hist].reshape(b, p, w * e)
        pos_part = np.broadcast_to(np.eye(self.seq_len)[positions][None], (b, p, self.seq_len))
        return np.concatenate([cls_part, tok_part, pos_part], axis=-1)


def truncation_mask(y: np.ndarray, top_k: int, top_p: float) -> np.ndarray | None:
    """Boolean mask of tokens kept by top-k then top-p; None when nothing is cut."""
    k = y.shape[-1]
    mask = None
    if 0 < top_k < k:
        order = np.argsort(-y, axis=-1, kind="stable")
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.arange(k), axis=-1)
        mask = ranks < top_k
    if top_p < 1.0:
        yy = y if mask is None else np.where(mask, y, -np.inf)
        order = np.argsort(-yy, axis=-1, kind="stable")
        sorted_y = np.take_along_axis(yy, order, axis=-1)
        e = np.exp(sorted_y - sorted_y[..., :1])
        probs = e / e.sum(axis=-1, keepdims=True)
        mass_before = np.cumsum(probs, axis=-1) - probs
        keep_sorted = mass_before < top_p
        keep = np.zeros_like(keep_sorted)
        np.put_along_axis(keep, order, keep_sorted, axis=-1)
        mask = keep if mask is None else (mask & keep)
    return mask


def _masked_log_softmax(y: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        y = np.where(mask, y, -np.inf)
    m = y.max(axis=-1, keepdims=True)
    z = y - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _mixed_logits(policy: ArPolicy, x_cond: np.ndarray, x_uncond: np.ndarray | None,
                  cfg_scale: float):
    l_c = mlp_forward(policy.mlp, x_cond)
    if x_uncond is None:
        return l_c
    l_u = mlp_forward(policy.mlp, x_uncond)
    return l_u + cfg_scale * (l_c - l_u)


@dataclass
class Scored:
    """Teacher-forced per-token log-probs and entropies, plus what backprop needs."""
    logp: np.ndarray
    entropy: np.ndarray
    classes: np.ndarray
    tokens: np.ndarray
    sampler: SamplerConfig
    _x_cond: np.ndarray
    _x_uncond: np.ndarray | None
    _hist: np.ndarray
    _q: np.ndarray
    _dh_dz: np.ndarray


def score(policy: ArPolicy, classes, tokens, sampler: SamplerConfig) -> Scored:
    """Per-token log-probs (B, T) under the sampling distribution, and entropies."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    b, t = tokens.shape
    if t != policy.seq_len:
        raise ValueError(f"sequence length {t} != policy length {policy.seq_len}")
    if tokens.min() < 0 or tokens.max() >= policy.vocab:
        raise ValueError(f"token outside [0, {policy.vocab})")
    if classes.shape != (b,) or classes.min() < 0 or classes.max() > policy.null_class:
        raise ValueError("invalid class labels")
    sampler.validate(policy.vocab)
    hist = policy.history(tokens)
    pos = np.arange(t)
    x_c = policy.inputs(classes, hist, pos).reshape(b * t, -1)
    x_u = None
    if sampler.cfg_scale != 1.0:
        x_u = policy.inputs(np.full(b, policy.null_class), hist, pos).reshape(b * t, -1)
    z = _mixed_logits(policy, x_c, x_u, sampler.cfg_scale).reshape(b, t, policy.vocab)
    h, dh_dz = entropy_from_logits(z)
    y = z / sampler.temperature
    mask = truncation_mask(y, sampler.top_k, sampler.top_p)
    logq = _masked_log_softmax(y, mask)
    logp = np.take_along_axis(logq, tokens[..., None], axis=-1)[..., 0]
    if not np.all(np.isfinite(logp)):
        raise ValueError("sequence contains a token outside the truncated support")
    return Scored(logp, h, classes, tokens, sampler, x_c, x_u, hist, np.exp(logq), dh_dz)


def score_backward(policy: ArPolicy, scored: Scored, g_logp, g_entropy=None) -> list[np.ndarray]:
    """Parameter gradients (ordered as ``policy.arrays()``) of
    sum(g_logp * logp) + sum(g_entropy * entropy)."""
    b, t = scored.tokens.shape
    k = policy.vocab
    g_logp = np.asarray(g_logp, dtype=np.float64)
    onehot = np.zeros((b, t, k))
    np.put_along_axis(onehot, scored.tokens[..., None], 1.0, axis=-1)
    dz = g_logp[..., None] * (onehot - scored._q) / scored.sampler.temperature
    if g_entropy is not None:
        dz = dz + np.asarray(g_entropy, dtype=np.float64)[..., None] * scored._dh_dz
    dz = dz.reshape(b * t, k)
    s = scored.sampler.cfg_scale
    if scored._x_uncond is None:
        gp, gx = mlp_backward(policy.mlp, scored._x_cond, dz)
        parts = [(scored.classes, gx)]
    else:
        gp, gx_c = mlp_backward(policy.mlp, scored._x_cond, s * dz)
        gp_u, gx_u = mlp_backward(policy.mlp, scored._x_uncond, (1.0 - s) * dz)
        for a, a_u in zip(gp.arrays(), gp_u.arrays()):
            a += a_u
        parts = [(scored.classes, gx_c), (np.full(b, policy.null_class), gx_u)]
    e, w = policy.emb_dim, policy.window
    g_class = np.zeros_like(policy.class_emb)
    g_token = np.zeros_like(policy.token_emb)
    for cls, gx in parts:
        gx = gx.reshape(b, t, -1)
        np.add.at(g_class, cls, gx[..., :e].sum(axis=1))
        np.add.at(g_token, scored._hist.reshape(-1), gx[..., e:e * (1 + w)].reshape(-1, e))
    return gp.arrays() + [g_class, g_token]


@dataclass
class RolloutBatch:
    tokens: np.ndarray   # (B, T)
    classes: np.ndarray  # (B,)
    logp: np.ndarray     # (B, T) under the truncated sampling distribution
    entropy: np.ndarray  # (B, T) of the pre-truncation softmax

    def __len__(self) -> int:
        return self.tokens.shape[0]


def sample_batch(policy: ArPolicy, classes, sampler: SamplerConfig, rng: Rng) -> RolloutBatch:
    """Sample one sequence per entry of ``classes``, token by token."""
    classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    if classes.min() < 0 or classes.max() >= policy.n_classes:
        raise ValueError(f"class outside [0, {policy.n_classes})")
    sampler.validate(policy.vocab)
    b, t = len(classes), policy.seq_len
    tokens = np.zeros((b, t), dtype=np.int64)
    null = np.full(b, policy.null_class)
    for pos in range(t):
        hist = policy.history(tokens)[:, pos:pos + 1]
        x_c = policy.inputs(classes, hist, np.array([pos]))[:, 0]
        x_u = None if sampler.cfg_scale == 1.0 else policy.inputs(null, hist, np.array([pos]))[:, 0]
        z = _mixed_logits(policy, x_c, x_u, sampler.cfg_scale)
        if sampler.greedy:
            tokens[:, pos] = np.argmax(z, axis=-1)
            continue
        y = z / sampler.temperature
        q = np.exp(_masked_log_softmax(y, truncation_mask(y, sampler.top_k, sampler.top_p)))
        tokens[:, pos] = rng.categorical(q)
    # recorded values come from the teacher-forced scorer so re-scoring is exact
    if sampler.greedy:
        scored = score(policy, classes, tokens, SamplerConfig(1.0, 0, 1.0, sampler.cfg_scale))
    else:
        scored = score(policy, classes, tokens, sampler)
    return RolloutBatch(tokens, classes, scored.logp, scored.entropy)


@dataclass
class RolloutSample:
    tokens: np.ndarray
    class_label: int
    logp: np.ndarray
    entropy: np.ndarray
    features: np.ndarray | None = None


def ar_sample(policy: ArPolicy, class_label: int, sampler: SamplerConfig, rng: Rng) -> RolloutSample:
    out = sample_batch(policy, [class_label], sampler, rng)
    return RolloutSample(out.tokens[0], int(class_label), out.logp[0], out.entropy[0])


def ar_logprob(policy: ArPolicy, sequence, class_label: int, sampler: SamplerConfig) -> np.ndarray:
    return score(policy, [class_label], [sequence], sampler).logp[0]

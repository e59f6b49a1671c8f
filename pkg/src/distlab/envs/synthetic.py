"""Stand-ins for the image-side machinery of the AR toy.

* :class:`FeatureEmbedder` replaces an Inception network: unigram and bigram
  histograms of a token sequence, projected by a fixed random matrix.
* :func:`align_reward` replaces a class/prompt similarity score: negative
  squared distance to the class template's features.
* :func:`pref_reward` replaces an aesthetic preference model: negative
  roughness of the token sequence.
* :func:`make_corpus` builds per-class template sequences and noisy copies
  of them, the "real data" for pretraining and reference moments.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..io import atomic_write_text
from ..numkit import Rng


class FeatureEmbedder:
    def __init__(self, vocab: int, dim: int = 64, seed: int = 0, scale: float = 1.0,
                 projection: np.ndarray | None = None):
        self.vocab = vocab
        n_raw = vocab + vocab * vocab
        if projection is None:
            projection = Rng(seed).normal((dim, n_raw)) * scale
        if projection.shape[1] != n_raw:
            raise ValueError(f"projection must have {n_raw} columns")
        self.projection = projection

    @classmethod
    def identity(cls, vocab: int) -> "FeatureEmbedder":
        n_raw = vocab + vocab * vocab
        return cls(vocab, n_raw, projection=np.eye(n_raw))

    @property
    def dim(self) -> int:
        return self.projection.shape[0]

    def histograms(self, tokens) -> np.ndarray:
        """Concatenated normalized unigram (K) and bigram (K*K) histograms, per row."""
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        b, t = tokens.shape
        if t == 0:
            raise ValueError("empty sequence")
        k = self.vocab
        if tokens.min() < 0 or tokens.max() >= k:
            raise ValueError(f"token outside [0, {k})")
        rows = np.repeat(np.arange(b), t)
        uni = np.zeros((b, k))
        np.add.at(uni, (rows, tokens.ravel()), 1.0)
        uni /= t
        bi = np.zeros((b, k * k))
        if t > 1:
            pairs = tokens[:, :-1] * k + tokens[:, 1:]
            np.add.at(bi, (np.repeat(np.arange(b), t - 1), pairs.ravel()), 1.0)
            bi /= t - 1
        return np.concatenate([uni, bi], axis=1)

    def __call__(self, tokens) -> np.ndarray:
        h = self.histograms(tokens)
        return h @ self.projection.T


def feature_embed(sequence, embedder: FeatureEmbedder) -> np.ndarray:
    """Features of one sequence (or a batch of sequences)."""
    seq = np.asarray(sequence)
    out = embedder(seq)
    return out[0] if seq.ndim == 1 else out


def align_reward(features, classes, templates: np.ndarray) -> np.ndarray:
    """-||f - template_c||^2; zero at the class template, negative elsewhere."""
    f = np.atleast_2d(features)
    classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    if classes.min() < 0 or classes.max() >= len(templates):
        raise ValueError(f"unknown class; {len(templates)} templates available")
    d = f - templates[classes]
    return -np.sum(d * d, axis=1)


def pref_reward(tokens, vocab: int) -> np.ndarray:
    """Negative mean squared successive difference of tokens rescaled to [0, 1]."""
    x = np.atleast_2d(np.asarray(tokens, dtype=np.float64)) / (vocab - 1)
    if x.shape[1] < 2:
        return np.zeros(x.shape[0])
    return -np.mean(np.diff(x, axis=1) ** 2, axis=1)


@dataclass
class Corpus:
    templates: np.ndarray  # (C, T) per-class target sequences
    tokens: np.ndarray     # (N, T)
    classes: np.ndarray    # (N,)
    vocab: int

    def to_dict(self) -> dict:
        return {"vocab": self.vocab, "templates": self.templates.tolist(),
                "tokens": self.tokens.tolist(), "classes": self.classes.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Corpus":
        return cls(np.asarray(doc["templates"], dtype=np.int64),
                   np.asarray(doc["tokens"], dtype=np.int64),
                   np.asarray(doc["classes"], dtype=np.int64), int(doc["vocab"]))

    def save(self, path) -> None:
        atomic_write_text(Path(path), json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Corpus":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_corpus(n_classes: int, vocab: int, seq_len: int, per_class: int, noise: float,
                seed: int, spread: int = 2) -> Corpus:
    """Random-walk templates; each corpus token is replaced with probability
    ``noise`` by the template token shifted by a nonzero offset in [-spread, spread]."""
    rng = Rng(seed)
    templates = np.zeros((n_classes, seq_len), dtype=np.int64)
    for c in range(n_classes):
        x = rng.integers(vocab)
        for t in range(seq_len):
            templates[c, t] = x
            x = int(np.clip(x + rng.integers(3) - 1, 0, vocab - 1))
    classes = np.repeat(np.arange(n_classes), per_class)
    base = templates[classes]
    flip = rng.uniform(base.shape) < noise
    offsets = rng.integers(2 * spread, base.shape) - spread
    offsets = np.where(offsets >= 0, offsets + 1, offsets)
    tokens = np.where(flip, np.clip(base + offsets, 0, vocab - 1), base)
    return Corpus(templates, tokens.astype(np.int64), classes, vocab)

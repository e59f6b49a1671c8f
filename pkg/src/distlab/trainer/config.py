"""Experiment configuration: nested dataclasses that round-trip through JSON.

Unknown keys are rejected at every level.  Overrides use dotted paths
(``grpo.kl_beta``) and take precedence over file values.
"""
from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..entropy import EntropyConfig
from ..envs.ar import SamplerConfig
from ..grpo import GrpoConfig

PAPER_LEARNING_RATE = 1e-5


class ConfigError(ValueError):
    pass


@dataclass
class Toy2dConfig:
    latent_dim: int = 8
    hidden: list[int] = field(default_factory=lambda: [64])
    line_noise: float = 0.05
    n_reference: int = 10000
    reference_seed: int = 1
    mode: str = "grpo"  # "grpo" (score function) or "pathwise"
    eval_samples: int = 2048
    eval_every: int = 50
    dump_points: int = 256

    def __post_init__(self):
        if self.mode not in ("grpo", "pathwise"):
            raise ConfigError(f"toy2d.mode must be 'grpo' or 'pathwise', got {self.mode!r}")


@dataclass
class ArConfig:
    vocab: int = 16
    seq_len: int = 16
    n_classes: int = 8
    window: int = 4
    emb_dim: int = 8
    hidden: list[int] = field(default_factory=lambda: [64])
    feature_dim: int = 64
    feature_scale: float = 1.0
    feature_seed: int = 7
    classes_per_iter: int = 8
    corpus_per_class: int = 256
    corpus_noise: float = 0.3
    corpus_seed: int = 3
    pretrain_iterations: int = 1500
    pretrain_lr: float = 0.5
    pretrain_lr_final: float = 0.01  # linear decay so the checkpoint settles
    mle_batch: int = 96
    class_dropout: float = 0.1
    init_checkpoint: str | None = None
    # target = pretrained normalized entropy + offset; null keeps entropy.target as given
    entropy_target_offset: float | None = 0.08
    eval_samples: int = 4096
    eval_every: int = 50


@dataclass
class OutputConfig:
    dir: str | None = None
    checkpoint_every: int = 0
    record_wall_clock: bool = False


@dataclass
class ExperimentConfig:
    env: str = "ar"
    seed: int = 0
    iterations: int = 600
    lr: float = 1e-3
    grad_clip: float = 1.0
    ema_alpha: float = 0.5
    eps_var: float = 1e-6
    eval_seed: int = 12345
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    toy2d: Toy2dConfig = field(default_factory=Toy2dConfig)
    ar: ArConfig = field(default_factory=ArConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.env not in ("toy2d", "ar"):
            raise ConfigError(f"env must be 'toy2d' or 'ar', got {self.env!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not 0 < self.ema_alpha < 1:
            raise ConfigError("ema_alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return _build(cls, doc, "")


def toy2d_defaults() -> ExperimentConfig:
    """Decided defaults for the 2-D line-matching experiment (distribution reward only)."""
    cfg = ExperimentConfig(env="toy2d", iterations=2000, lr=1e-3)
    cfg.grpo = GrpoConfig(group_size=64, epochs=1, kl_beta=0.0, w_align=0.0, w_pref=0.0, w_dist=1.0)
    cfg.entropy.enabled = False
    return cfg


def ar_defaults() -> ExperimentConfig:
    """Decided defaults for the toy AR fine-tuning runs.

    The distribution reward is a leave-one-out difference and is roughly a
    batch size smaller than the align reward on this toy, so it is upweighted.
    """
    cfg = ExperimentConfig(env="ar", iterations=600, lr=3e-3)
    cfg.grpo = GrpoConfig(w_align=1.0, w_pref=1.0, w_dist=1500.0)
    return cfg


def env_defaults(env: str | None) -> ExperimentConfig:
    return toy2d_defaults() if env == "toy2d" else ar_defaults()


def paper_faithful(cfg: ExperimentConfig) -> ExperimentConfig:
    cfg.lr = PAPER_LEARNING_RATE
    return cfg


def _hints(cls):
    return typing.get_type_hints(cls)


def _build(cls, doc, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(path + k for k in unknown)}")
    kwargs = {}
    for name, value in doc.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{path}{name}.")
        else:
            kwargs[name] = _coerce(hint, value, path + name)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(hint, value, name: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if value is None:
        if type(None) in args:
            return None
        raise ConfigError(f"{name}: null not allowed")
    if origin is typing.Union or origin is types.UnionType:
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, name)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list")
        return [_coerce(args[0], v, name) for v in value]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string")
        return value
    return value


def parse_override_value(text: str):
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: dict[str, object]) -> dict:
    """Set dotted keys in a config document (a nested dict), creating levels as needed."""
    doc = json.loads(json.dumps(doc))
    for key, value in overrides.items():
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {p} is not a section")
        node[parts[-1]] = value
    return doc


def load_config(path, overrides: dict | None = None, env: str | None = None) -> ExperimentConfig:
    """Read a JSON config, apply overrides, fall back to DISTLAB_SEED for the seed.

    Keys absent from the file keep the defaults of ``env`` (``toy2d`` has its own).
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    overrides = dict(overrides or {})
    if "seed" not in doc and "seed" not in overrides and os.environ.get("DISTLAB_SEED"):
        overrides["seed"] = int(os.environ["DISTLAB_SEED"])
    doc = apply_overrides(doc, overrides)
    base = env_defaults(env or doc.get("env"))
    merged = _deep_merge(base.to_dict(), doc)
    if env is not None:
        merged["env"] = env
    return ExperimentConfig.from_dict(merged)


def _deep_merge(base: dict, top: dict) -> dict:
    out = dict(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out

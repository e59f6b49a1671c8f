"""Training loops: one GRPO iteration, the toy runs, the MLE baseline, evaluation."""
from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..dist_reward import (EmaMomentState, MomentPair, batch_moments, ema_loo_rewards,
                           fid_diag, sigma_from_raw)
from ..entropy import c_eff as entropy_c_eff
from ..entropy import normalized_entropy_fraction
from ..grpo import GroupBatch, composite_rewards, grpo_loss
from ..numkit import Rng, clip_global_norm
from .config import ExperimentConfig
from .runtime import ArEnv, Rollouts, Toy2dEnv, mle_step, pretrained_policy

CSV_FIELDS = ["iter", "reward_mean", "reward_align", "reward_pref", "reward_dist", "ema_fid",
              "entropy_mean", "entropy_frac", "c_eff", "kl_mean", "loss", "ms"]


class NumericalAbort(RuntimeError):
    """Raised when the loss or gradients stop being finite.

    ``diagnostics`` describes the failing iteration; the trainer attaches
    the records and evaluations so far plus the last state for persistence.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.records: list = []
        self.evals: list = []
        self.state = None


def _abort(exc: Exception, state, records, evals) -> NumericalAbort:
    out = exc if isinstance(exc, NumericalAbort) else NumericalAbort(str(exc))
    out.diagnostics.setdefault("iteration", state.iteration)
    out.diagnostics.setdefault("error", str(exc))
    out.records, out.evals, out.state = list(records), list(evals), state
    return out


@dataclass
class TrainingRecord:
    iter: int
    reward_mean: float
    reward_align: float
    reward_pref: float
    reward_dist: float
    ema_fid: float
    entropy_mean: float
    entropy_frac: float
    c_eff: float
    kl_mean: float
    loss: float
    ms: float = 0.0

    def as_row(self) -> list:
        return [getattr(self, k) for k in CSV_FIELDS]


@dataclass
class TrainerState:
    cfg: ExperimentConfig
    env: object
    policy: object
    ref_policy: object | None
    reference: MomentPair
    ema: EmaMomentState
    iteration: int = 0
    updates: int = 0
    last_grad_norm: float = 0.0


@dataclass
class EvalResult:
    fid: float
    reward_align: float
    reward_pref: float
    reward_mean: float
    entropy_mean: float
    entropy_frac: float
    moments: MomentPair = field(repr=False)


@dataclass
class RunResult:
    records: list[TrainingRecord]
    policy: object
    evals: list[tuple[int, EvalResult]]
    state: TrainerState | None = None
    extra: dict = field(default_factory=dict)

    @property
    def fid_initial(self) -> float:
        return self.evals[0][1].fid

    @property
    def fid_final(self) -> float:
        return self.evals[-1][1].fid


def make_env(cfg: ExperimentConfig):
    if cfg.env == "toy2d":
        return Toy2dEnv(cfg.toy2d, cfg.eps_var)
    return ArEnv(cfg.ar, cfg.sampler, cfg.eps_var)


def iteration_rng(cfg: ExperimentConfig, iteration: int) -> Rng:
    # stream 0/1 are used by initialization and pretraining
    return Rng(cfg.seed).spawn(1000 + iteration)


def init_state(cfg: ExperimentConfig, env=None, policy=None) -> TrainerState:
    env = env if env is not None else make_env(cfg)
    if policy is None:
        if cfg.env == "ar":
            policy = load_initial_ar_policy(cfg)
        else:
            policy = env.init_policy(Rng(cfg.seed).spawn(0))
    ref = policy.copy() if cfg.grpo.kl_beta > 0 else None
    ema = EmaMomentState(alpha=cfg.ema_alpha, eps_var=cfg.eps_var)
    return TrainerState(cfg, env, policy, ref, env.reference, ema)


def load_initial_ar_policy(cfg: ExperimentConfig):
    if cfg.ar.init_checkpoint:
        from .checkpoint import load_policy
        return load_policy(cfg.ar.init_checkpoint)
    return pretrained_policy(cfg)


def _sgd(policy, grads, lr: float) -> None:
    for p, g in zip(policy.arrays(), grads):
        p -= lr * g


def grpo_iteration(state: TrainerState) -> tuple[TrainerState, TrainingRecord]:
    """Sample, reward, normalize, cache old log-probs, then K clipped-loss epochs.

    The EMA moment state advances once, after the epochs.
    """
    t0 = time.perf_counter()
    cfg, env, policy = state.cfg, state.env, state.policy
    g = cfg.grpo
    rng = iteration_rng(cfg, state.iteration)

    ro: Rollouts = env.rollout(policy, rng, g.group_size, iteration=state.iteration)
    feats = env.features(ro)
    r_align, r_pref = env.instance_rewards(ro, feats)
    r_dist, next_ema = ema_loo_rewards(state.ema, feats, state.reference)
    ema_fid = fid_diag(state.reference, next_ema.moments())
    rewards = composite_rewards(r_align, r_pref, r_dist, g.w_align, g.w_pref, g.w_dist)

    logp_old, _, handle = env.score(policy, ro)
    logp_old = logp_old.copy()
    logp_ref = None
    if g.kl_beta > 0 and state.ref_policy is not None:
        logp_ref = env.score(state.ref_policy, ro)[0]

    progress = state.iteration / cfg.iterations
    entropy_frac = env.entropy_fraction(ro.entropy)
    coef = 0.0
    if cfg.env == "ar" and cfg.entropy.enabled:
        coef = entropy_c_eff(progress, min(max(entropy_frac, 0.0), 1.0), cfg.entropy)

    first = None
    for epoch in range(g.epochs):
        if epoch == 0:
            logp, ent = logp_old, ro.entropy
        else:
            logp, ent, handle = env.score(policy, ro)
        batch = GroupBatch.from_rewards(rewards, logp, logp_old, ent, logp_ref,
                                        group_ids=ro.group_ids, adv_eps=g.adv_eps)
        out = grpo_loss(batch, g, coef)
        if first is None:
            first = out
        if not math.isfinite(out.loss):
            raise NumericalAbort(f"non-finite loss at iteration {state.iteration}",
                                 {"epoch": epoch, **out.diagnostics(),
                                  "reward_mean": float(np.mean(rewards)), "c_eff": coef})
        grads = env.backward(policy, ro, handle, out.grad_logp, out.grad_entropy)
        norm = clip_global_norm(grads, cfg.grad_clip)
        if not math.isfinite(norm):
            raise NumericalAbort(f"non-finite gradient at iteration {state.iteration}",
                                 {"epoch": epoch, **out.diagnostics()})
        state.last_grad_norm = norm
        _sgd(policy, grads, cfg.lr)
        state.updates += 1

    state.ema = next_ema
    ms = (time.perf_counter() - t0) * 1e3 if cfg.output.record_wall_clock else 0.0
    rec = TrainingRecord(state.iteration, float(rewards.mean()), float(np.mean(r_align)),
                         float(np.mean(r_pref)), float(np.mean(r_dist)), ema_fid,
                         float(np.mean(ro.entropy)), entropy_frac, coef, first.kl_mean,
                         first.loss, ms)
    state.iteration += 1
    return state, rec


def pathwise_iteration(state: TrainerState) -> tuple[TrainerState, TrainingRecord]:
    """Toy-2D alternative: differentiate diagonal FID of the batch through the samples."""
    cfg, env, policy = state.cfg, state.env, state.policy
    rng = iteration_rng(cfg, state.iteration)
    ro = env.rollout(policy, rng, cfg.grpo.group_size)
    x = ro.points
    r_dist, next_ema = ema_loo_rewards(state.ema, x, state.reference)
    loss, g_x = fid_and_grad(x, state.reference, cfg.eps_var)
    mu, log_sigma = policy.heads(ro.z)
    grads = policy.backward_heads(ro.z, g_x, g_x * np.exp(log_sigma) * ro.noise)
    clip_global_norm(grads, cfg.grad_clip)
    _sgd(policy, grads, cfg.lr)
    state.updates += 1
    state.ema = next_ema
    rec = TrainingRecord(state.iteration, float(np.mean(r_dist)), 0.0, 0.0,
                         float(np.mean(r_dist)), fid_diag(state.reference, next_ema.moments()),
                         float(np.mean(ro.entropy)), 0.0, 0.0, 0.0, loss)
    state.iteration += 1
    return state, rec


def fid_and_grad(x: np.ndarray, ref: MomentPair, eps_var: float):
    """Diagonal FID of the batch moments of ``x`` and its gradient w.r.t. ``x``."""
    n = x.shape[0]
    mom = batch_moments(x, eps_var)
    loss = fid_diag(ref, mom)
    d_mu = -2.0 * (ref.mu - mom.mu)
    d_sigma = -2.0 * (ref.sigma - mom.sigma)
    live = (mom.m2 - mom.mu * mom.mu) > 0
    d_m2 = np.where(live, d_sigma / (2.0 * mom.sigma), 0.0)
    d_mu = d_mu + np.where(live, -d_sigma * mom.mu / mom.sigma, 0.0)
    return loss, (d_mu[None, :] + 2.0 * x * d_m2[None, :]) / n


def evaluate(env, policy, n_samples: int, seed: int, reference: MomentPair | None = None,
             eps_var: float = 1e-6) -> EvalResult:
    """Fresh-seeded rollouts; FID from plain batch moments, no EMA."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    rng = Rng(seed)
    reference = env.reference if reference is None else reference
    if isinstance(env, ArEnv):
        from ..envs.ar import sample_batch
        classes = np.arange(n_samples) % env.cfg.n_classes
        rb = sample_batch(policy, classes, env.sampler, rng)
        ro = Rollouts(np.zeros(n_samples, dtype=np.int64), rb.logp, rb.entropy,
                      tokens=rb.tokens, classes=rb.classes)
    else:
        ro = env.rollout(policy, rng, n_samples)
    feats = env.features(ro)
    mom = batch_moments(feats, eps_var)
    ra, rp = env.instance_rewards(ro, feats)
    frac = env.entropy_fraction(ro.entropy)
    return EvalResult(fid_diag(reference, mom), float(np.mean(ra)), float(np.mean(rp)),
                      float(np.mean(ra) + np.mean(rp)), float(np.mean(ro.entropy)), frac, mom)


def _eval_every(cfg: ExperimentConfig) -> tuple[int, int]:
    sub = cfg.toy2d if cfg.env == "toy2d" else cfg.ar
    return sub.eval_every, sub.eval_samples


def calibrate_entropy_target(cfg: ExperimentConfig, env, policy) -> float:
    """Pretrained normalized entropy (under the training sampler) plus the configured offset."""
    if cfg.env != "ar" or cfg.ar.entropy_target_offset is None:
        return cfg.entropy.target
    ev = evaluate(env, policy, cfg.ar.eval_samples, cfg.eval_seed, eps_var=cfg.eps_var)
    return float(min(max(ev.entropy_frac + cfg.ar.entropy_target_offset, 0.0), 1.0))


def train(cfg: ExperimentConfig, env=None, policy=None,
          on_iteration: Callable[[TrainerState, TrainingRecord], None] | None = None,
          on_eval: Callable[[int, EvalResult, TrainerState], None] | None = None) -> RunResult:
    """GRPO (or, for toy2d in pathwise mode, direct FID descent) for ``cfg.iterations``.

    ``cfg`` is not modified; the resolved copy (with the calibrated entropy
    target) is returned in ``extra["config"]``.
    """
    cfg = copy.deepcopy(cfg)
    state = init_state(cfg, env, policy)
    if cfg.env == "ar" and cfg.entropy.enabled:
        cfg.entropy.target = calibrate_entropy_target(cfg, state.env, state.policy)
    every, n_eval = _eval_every(cfg)
    step = pathwise_iteration if (cfg.env == "toy2d" and cfg.toy2d.mode == "pathwise") \
        else grpo_iteration
    records, evals = [], []

    def do_eval(it):
        ev = evaluate(state.env, state.policy, n_eval, cfg.eval_seed, state.reference, cfg.eps_var)
        evals.append((it, ev))
        if on_eval:
            on_eval(it, ev, state)

    do_eval(0)
    for it in range(cfg.iterations):
        try:
            state, rec = step(state)
        except (NumericalAbort, FloatingPointError) as exc:
            raise _abort(exc, state, records, evals) from exc
        records.append(rec)
        if on_iteration:
            on_iteration(state, rec)
        if every and (it + 1) % every == 0 and it + 1 != cfg.iterations:
            do_eval(it + 1)
    do_eval(cfg.iterations)
    return RunResult(records, state.policy, evals, state,
                     {"entropy_target": cfg.entropy.target, "config": cfg.to_dict()})


def train_toy2d(cfg: ExperimentConfig, **kw) -> RunResult:
    if cfg.env != "toy2d":
        raise ValueError("train_toy2d needs env='toy2d'")
    return train(cfg, **kw)


def train_ar(cfg: ExperimentConfig, **kw) -> RunResult:
    if cfg.env != "ar":
        raise ValueError("train_ar needs env='ar'")
    return train(cfg, **kw)


def train_mle(cfg: ExperimentConfig, env=None, policy=None,
              on_iteration: Callable[[TrainerState, TrainingRecord], None] | None = None,
              on_eval: Callable[[int, EvalResult, TrainerState], None] | None = None) -> RunResult:
    """Teacher-forced cross-entropy continuation on the corpus, evaluated like GRPO runs."""
    if cfg.env != "ar":
        raise ValueError("MLE baseline needs env='ar'")
    env = env if env is not None else make_env(cfg)
    policy = policy if policy is not None else load_initial_ar_policy(cfg)
    state = TrainerState(cfg, env, policy, None, env.reference,
                         EmaMomentState(alpha=cfg.ema_alpha, eps_var=cfg.eps_var))
    every, n_eval = cfg.ar.eval_every, cfg.ar.eval_samples
    records, evals = [], []

    def do_eval(it):
        ev = evaluate(env, policy, n_eval, cfg.eval_seed, env.reference, cfg.eps_var)
        evals.append((it, ev))
        if on_eval:
            on_eval(it, ev, state)

    do_eval(0)
    log_k = math.log(env.vocab)
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        try:
            loss = mle_step(env, policy, iteration_rng(cfg, it), cfg.lr, cfg.grad_clip,
                            cfg.ar.mle_batch, cfg.ar.class_dropout)
            if not math.isfinite(loss):
                raise NumericalAbort(f"non-finite MLE loss at iteration {it}")
        except (NumericalAbort, FloatingPointError) as exc:
            raise _abort(exc, state, records, evals) from exc
        state.iteration += 1
        state.updates += 1
        ms = (time.perf_counter() - t0) * 1e3 if cfg.output.record_wall_clock else 0.0
        last = evals[-1][1]
        rec = TrainingRecord(it, last.reward_mean, last.reward_align, last.reward_pref, 0.0,
                             last.fid, last.entropy_mean, last.entropy_mean / log_k, 0.0, 0.0,
                             loss, ms)
        records.append(rec)
        if on_iteration:
            on_iteration(state, rec)
        if every and (it + 1) % every == 0 and it + 1 != cfg.iterations:
            do_eval(it + 1)
    do_eval(cfg.iterations)
    return RunResult(records, policy, evals, state, {"config": cfg.to_dict()})


def record_dict(rec: TrainingRecord) -> dict:
    return asdict(rec)

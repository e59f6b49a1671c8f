"""Self-verification suites run by ``distlab check``.

Each suite compares library routines against slow, direct recomputations
(leave-one-out batches rebuilt row by row, central finite differences,
closed-form controller values).  ``fault`` names a suite whose library
output is deliberately corrupted, as a negative control for the harness.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .dist_reward import EmaMomentState, MomentPair, ema_loo_rewards, loo_batch_rewards
from .entropy import EntropyConfig, c_eff, c_sched, normalized_entropy_fraction, token_entropy
from .envs.toy2d import Gaussian2dPolicy, gaussian_logprob, gaussian_logprob_grad
from .grpo import GroupBatch, GrpoConfig, grpo_loss
from .numkit import Rng, assign_flat, finite_diff_check, flatten, init_mlp, mlp_backward, mlp_forward

SUITES = ("loo", "ema_loo", "gradients", "entropy")
FAULT_SIZE = 1e-3


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    worst: float
    tolerance: float
    seconds: float
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


# direct recomputation helpers

def naive_moments(x: np.ndarray):
    mu = x.mean(axis=0)
    return mu, np.mean((x - mu) ** 2, axis=0)


def naive_fid(mu_r, sigma_r, mu, sigma) -> float:
    return math.fsum((mu_r - mu) ** 2) + math.fsum((sigma_r - sigma) ** 2)


def naive_loo_rewards(x: np.ndarray, ref: MomentPair, eps_var: float) -> np.ndarray:
    mu, var = naive_moments(x)
    full = naive_fid(ref.mu, ref.sigma, mu, np.sqrt(var + eps_var))
    out = np.empty(len(x))
    for i in range(len(x)):
        mu_i, var_i = naive_moments(np.delete(x, i, axis=0))
        out[i] = naive_fid(ref.mu, ref.sigma, mu_i, np.sqrt(var_i + eps_var)) - full
    return out


def naive_ema_loo_rewards(x: np.ndarray, ref: MomentPair, prev_mu, prev_m2, alpha: float,
                          eps_var: float) -> np.ndarray:
    def blended(sub):
        mu = sub.mean(axis=0)
        m2 = (sub * sub).mean(axis=0)
        if prev_mu is not None:
            mu = (1 - alpha) * prev_mu + alpha * mu
            m2 = (1 - alpha) * prev_m2 + alpha * m2
        sigma = np.sqrt(np.maximum(m2 - mu * mu, 0.0) + eps_var)
        return naive_fid(ref.mu, ref.sigma, mu, sigma)

    full = blended(x)
    return np.array([blended(np.delete(x, i, axis=0)) - full for i in range(len(x))])


def _random_ref(rng: Rng, d: int) -> MomentPair:
    return MomentPair(rng.normal(d), 0.2 + rng.uniform(d) * 1.5)


def _random_batch(rng: Rng, n: int, d: int) -> np.ndarray:
    return rng.normal((n, d)) * (0.3 + 2 * rng.uniform(d)) + rng.normal(d)


def check_loo(n_cases: int = 100, seed: int = 101, tol: float = 1e-10,
              fault: bool = False) -> SuiteResult:
    t0 = time.perf_counter()
    rng = Rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        n = 2 + int(rng.integers(63))
        d = 1 + int(rng.integers(256))
        x = _random_batch(rng, n, d)
        ref = _random_ref(rng, d)
        got = loo_batch_rewards(x, ref)
        if fault:
            got[0] += FAULT_SIZE
        worst = max(worst, float(np.max(np.abs(got - naive_loo_rewards(x, ref, 1e-6)))))
    return SuiteResult("loo", bool(worst < tol), n_cases, worst, tol, time.perf_counter() - t0)


def check_ema_loo(n_cases: int = 100, seed: int = 202, tol: float = 1e-10,
                  fault: bool = False) -> SuiteResult:
    t0 = time.perf_counter()
    rng = Rng(seed)
    worst = 0.0
    for case in range(n_cases):
        n = 2 + int(rng.integers(63))
        d = 1 + int(rng.integers(256))
        ref = _random_ref(rng, d)
        state = EmaMomentState(alpha=0.5)
        prev_mu = prev_m2 = None
        # a cold-start batch, then a warm one (every other case stays cold)
        for step in range(1 + case % 2):
            x = _random_batch(rng, n, d)
            got, nxt = ema_loo_rewards(state, x, ref)
            if fault:
                got[-1] -= FAULT_SIZE
            want = naive_ema_loo_rewards(x, ref, prev_mu, prev_m2, 0.5, 1e-6)
            worst = max(worst, float(np.max(np.abs(got - want))))
            state, prev_mu, prev_m2 = nxt, nxt.mu, nxt.m2
    return SuiteResult("ema_loo", bool(worst < tol), n_cases, worst, tol, time.perf_counter() - t0)


# gradient suites: each returns the worst relative error over one random configuration

def fd_mlp_case(rng: Rng, h: float = 1e-5, corrupt: bool = False) -> float:
    depth = 1 + int(rng.integers(3))
    sizes = [1 + int(rng.integers(5)) for _ in range(depth + 1)]
    params = init_mlp(sizes, rng)
    for b in params.biases:
        b += rng.normal(b.shape) * 0.1
    batch = 1 + int(rng.integers(4))
    x = rng.normal((batch, sizes[0]))
    w = rng.normal((batch, sizes[-1]))
    grads, _ = mlp_backward(params, x, w)
    g = flatten(grads.arrays())
    if corrupt:
        g[0] += 1.0
    arrays = params.arrays()

    def f(theta):
        assign_flat(arrays, theta)
        return float(np.sum(w * mlp_forward(params, x)))

    return finite_diff_check(f, flatten(arrays), g, h)


def fd_gaussian_case(rng: Rng, h: float = 1e-5) -> float:
    dz = 1 + int(rng.integers(4))
    policy = Gaussian2dPolicy.init(rng, dz, (1 + int(rng.integers(6)),))
    n = 1 + int(rng.integers(4))
    z = rng.normal((n, dz))
    x = rng.normal((n, 2)) * 2
    wts = rng.normal(n)
    g = flatten(gaussian_logprob_grad(policy, z, x, wts))
    arrays = policy.arrays()

    def f(theta):
        assign_flat(arrays, theta)
        return float(np.sum(wts * gaussian_logprob(policy, z, x)))

    return finite_diff_check(f, flatten(arrays), g, h)


def fd_grpo_case(rng: Rng, h: float = 1e-5) -> float:
    g_size = 2 + int(rng.integers(6))
    t = 1 + int(rng.integers(6))
    cfg = GrpoConfig(group_size=g_size, kl_beta=float(rng.uniform() * 4),
                     ratio_mode=("mean", "product")[int(rng.integers(2))])
    logp_old = -rng.uniform((g_size, t)) * 3 - 0.01
    logp = logp_old + rng.normal((g_size, t)) * 0.15
    logp_ref = logp_old + rng.normal((g_size, t)) * 0.1
    entropy = rng.uniform((g_size, t)) * 2
    rewards = rng.normal(g_size)
    coef = float(rng.uniform() * 4e-3)

    def build(lp, ent):
        return GroupBatch.from_rewards(rewards, lp, logp_old, ent, logp_ref)

    out = grpo_loss(build(logp, entropy), cfg, coef)
    e1 = finite_diff_check(lambda v: grpo_loss(build(v, entropy), cfg, coef).loss,
                           logp, out.grad_logp, h)
    e2 = finite_diff_check(lambda v: grpo_loss(build(logp, v), cfg, coef).loss,
                           entropy, out.grad_entropy, h)
    return max(e1, e2)


def check_gradients(n_cases: int = 100, seed: int = 303, tol: float = 1e-4,
                    fault: bool = False) -> SuiteResult:
    t0 = time.perf_counter()
    rng = Rng(seed)
    worst = {"mlp": 0.0, "gaussian": 0.0, "grpo": 0.0}
    for case in range(n_cases):
        worst["mlp"] = max(worst["mlp"], fd_mlp_case(rng, corrupt=fault and case == 0))
        worst["gaussian"] = max(worst["gaussian"], fd_gaussian_case(rng))
        worst["grpo"] = max(worst["grpo"], fd_grpo_case(rng))
    w = max(worst.values())
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
    return SuiteResult("gradients", bool(w < tol), 3 * n_cases, w, tol, time.perf_counter() - t0, detail)


def check_entropy(seed: int = 404, fault: bool = False) -> SuiteResult:
    t0 = time.perf_counter()
    cfg = EntropyConfig()
    failures = []

    def expect(cond, what):
        if not cond:
            failures.append(what)

    expect(abs(token_entropy(np.full(4, 0.25)) - math.log(4)) < 1e-12, "uniform entropy")
    expect(token_entropy(np.eye(5)[2]) == 0.0, "one-hot entropy")
    expect(abs(normalized_entropy_fraction(np.full(6, math.log(8)), 8) - 1.0) < 1e-12, "H=1")
    expect(c_sched(0.0, cfg) == 0.0, "c_sched(0)")
    expect(abs(c_sched(0.5, cfg) - 2.2e-3) < 1e-15, "flat region")
    expect(abs(c_sched(1.0, cfg) - 7e-5) < 1e-15, "cosine endpoint")
    for p in (cfg.warmup_end, cfg.flat_end):
        expect(abs(c_sched(p - 1e-13, cfg) - c_sched(p + 1e-13, cfg)) < 1e-12, f"continuity {p}")
    expected = 2.2e-3 * math.exp(3.0 * 0.08)
    got = c_eff(0.5, 0.70, cfg)
    if fault:
        got *= 1.5
    expect(abs(got - expected) < 1e-15, "c_eff(0.5, 0.70)")
    expect(c_eff(0.5, 0.0, cfg) == cfg.c_max, "upper clamp")
    expect(c_eff(0.5, 0.78, cfg) == c_sched(0.5, cfg), "deadband")
    rng = Rng(seed)
    n = 0
    for _ in range(500):
        p = float(rng.uniform())
        hs = np.sort(rng.uniform(8))
        cs = [c_eff(p, float(h), cfg) for h in hs]
        outside = [abs(cfg.target - h) > cfg.deadband for h in hs]
        for c, out in zip(cs, outside):
            if out and not cfg.c_min <= c <= cfg.c_max:
                failures.append(f"clamp range p={p:.3f}")
        out_cs = [c for c, o in zip(cs, outside) if o]
        if any(b > a + 1e-18 for a, b in zip(out_cs, out_cs[1:])):
            failures.append(f"monotonicity p={p:.3f}")
        probs = rng.uniform(6)
        probs /= probs.sum()
        if abs(token_entropy(probs) - token_entropy(probs[rng.permutation(6)])) > 1e-12:
            failures.append("permutation invariance")
        n += 1
    return SuiteResult("entropy", not failures, n + 12, float(len(failures)), 0.0,
                       time.perf_counter() - t0, "; ".join(failures[:5]))


def run_checks(fault: str | None = None, quick: bool = False) -> list[SuiteResult]:
    if fault is not None and fault not in SUITES:
        raise ValueError(f"unknown suite {fault!r}; choose from {', '.join(SUITES)}")
    n = 20 if quick else 100
    return [
        check_loo(n, fault=fault == "loo"),
        check_ema_loo(n, fault=fault == "ema_loo"),
        check_gradients(n, fault=fault == "gradients"),
        check_entropy(fault=fault == "entropy"),
    ]


def format_table(results: list[SuiteResult]) -> str:
    lines = [f"{'suite':<10} {'status':<6} {'cases':>6} {'worst':>10} {'tol':>8} {'sec':>6}"]
    for r in results:
        lines.append(f"{r.name:<10} {'PASS' if r.passed else 'FAIL':<6} {r.cases:>6} "
                     f"{r.worst:>10.2e} {r.tolerance:>8.0e} {r.seconds:>6.2f}"
                     + (f"  {r.detail}" if r.detail else ""))
    return "\n".join(lines)

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from distlab.dist_reward import (EPS_VAR, EmaMomentState, MomentPair, batch_moments,
                                 ema_loo_rewards, ema_update, fid_diag, load_reference,
                                 loo_batch_rewards, loo_moments, reference_moments_from_samples,
                                 save_reference, sigma_from_raw)
from distlab.envs import line_dataset
from distlab.numkit import Rng


def mp(mu, sigma):
    return MomentPair(np.asarray(mu, float), np.asarray(sigma, float))


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def batches(min_n=2, max_n=12, max_d=6):
    return st.integers(1, max_d).flatmap(
        lambda d: arrays(np.float64, st.tuples(st.integers(min_n, max_n), st.just(d)),
                         elements=finite))


# --- batch moments and FID -------------------------------------------------

def test_two_point_moments():
    m = batch_moments([[0.0, 0.0], [2.0, 2.0]], eps_var=0.0)
    np.testing.assert_array_equal(m.mu, [1, 1])
    np.testing.assert_array_equal(m.sigma, [1, 1])


def test_repeated_point_hits_floor():
    m = batch_moments(np.tile([3.0, -1.0], (5, 1)))
    np.testing.assert_allclose(m.sigma, math.sqrt(EPS_VAR), rtol=1e-12)


def test_moments_match_two_pass(rng):
    x = rng.normal((16, 4))
    m = batch_moments(x)
    mu, var = oracles.mean_var(x.tolist())
    np.testing.assert_allclose(m.mu, mu, atol=1e-12)
    np.testing.assert_allclose(m.sigma, np.sqrt(np.array(var) + EPS_VAR), atol=1e-12)


def test_empty_and_bad_batches():
    with pytest.raises(ValueError):
        batch_moments(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        batch_moments([[1.0, np.nan]])
    with pytest.raises(ValueError):
        loo_moments(np.zeros((1, 3)))


@pytest.mark.parametrize("mu,sigma,expected", [
    ((0, 0), (1, 1), 0.0),
    ((1, 0), (1, 1), 1.0),
    ((3, 4), (2, 1), 26.0),
])
def test_fid_examples(mu, sigma, expected):
    assert fid_diag(mp((0, 0), (1, 1)), mp(mu, sigma)) == expected


def test_fid_dimension_mismatch():
    with pytest.raises(ValueError):
        fid_diag(mp([0, 0], [1, 1]), mp([0], [1]))


def test_fid_high_dimension_is_exactly_rounded():
    r = Rng(9)
    d = 4096
    a = mp(r.normal(d) * 1e3, r.uniform(d))
    b = mp(a.mu + r.normal(d) * 1e-4, r.uniform(d))
    mpmath.mp.dps = 60
    exact = mpmath.fsum([(mpmath.mpf(float(x)) - mpmath.mpf(float(y))) ** 2
                         for x, y in zip(np.r_[a.mu, a.sigma], np.r_[b.mu, b.sigma])])
    # each squared difference rounds once, and two exactly rounded halves are added
    assert abs(fid_diag(a, b) - float(exact)) <= 4 * d * 2**-53 * float(exact)


@given(batches(), batches())
def test_fid_nonnegative_symmetric(x, y):
    if x.shape[1] != y.shape[1]:
        return
    a, b = batch_moments(x), batch_moments(y)
    assert fid_diag(a, b) >= 0
    assert fid_diag(a, b) == fid_diag(b, a)
    assert fid_diag(a, a) == 0.0


@given(batches(), st.floats(0.1, 10))
def test_fid_scales_quadratically(x, s):
    y = x + 1.0
    a, b = batch_moments(x, 0.0), batch_moments(y * 0.5, 0.0)
    sa, sb = batch_moments(x * s, 0.0), batch_moments(y * 0.5 * s, 0.0)
    base = fid_diag(a, b)
    assert math.isclose(fid_diag(sa, sb), s * s * base, rel_tol=1e-9, abs_tol=1e-9 * s * s)


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e8, 1e8)))
def test_sigma_clamp_under_cancellation(mu):
    # m2 slightly below mu^2, as rounding can produce
    m2 = mu * mu * (1 - 1e-15)
    s = sigma_from_raw(mu, m2)
    assert np.all(np.isfinite(s)) and np.all(s >= math.sqrt(EPS_VAR))


# --- leave-one-out ---------------------------------------------------------

def test_loo_pair_case():
    x = np.array([[1.0, 2.0], [5.0, -1.0]])
    loo = loo_moments(x)
    np.testing.assert_array_equal(loo[0].mu, [5.0, -1.0])
    np.testing.assert_allclose(loo[0].sigma, math.sqrt(EPS_VAR))


@given(batches())
def test_loo_sum_identity(x):
    n = len(x)
    loo = loo_moments(x)
    s1 = x.sum(axis=0)
    # mean over i of S1_{-i} = (N-1)/N * S1
    np.testing.assert_allclose((loo.mu * (n - 1)).mean(axis=0), (n - 1) / n * s1,
                               rtol=1e-9, atol=1e-9)


def test_loo_moments_match_subsets(rng):
    x = rng.normal((8, 3))
    loo = loo_moments(x)
    for i in range(8):
        sub = np.delete(x, i, axis=0)
        mu, var = oracles.mean_var(sub.tolist())
        np.testing.assert_allclose(loo[i].mu, mu, atol=1e-10)
        np.testing.assert_allclose(loo[i].sigma, np.sqrt(np.array(var) + EPS_VAR), atol=1e-10)


def test_loo_rewards_symmetric_pair():
    r = loo_batch_rewards([[-2.0], [2.0]], mp([0.0], [1.0]))
    assert r[0] == r[1]


def test_sample_at_reference_mean_scores_best():
    x = np.array([[0.0, 0.0], [4.0, 5.0], [-6.0, 3.0], [5.0, -4.0], [7.0, 7.0]])
    r = loo_batch_rewards(x, mp([0, 0], [1, 1]))
    brute = oracles.loo_rewards(x.tolist(), [0, 0], [1, 1])
    assert int(np.argmax(brute)) == 0 == int(np.argmax(r))


def test_loo_rewards_brute_force_small(rng):
    x = rng.normal((6, 2))
    ref = mp(rng.normal(2), 0.5 + rng.uniform(2))
    want = oracles.loo_rewards(x.tolist(), ref.mu.tolist(), ref.sigma.tolist())
    np.testing.assert_allclose(loo_batch_rewards(x, ref), want, atol=1e-10, rtol=0)


@given(batches(max_n=8), st.randoms(use_true_random=False))
def test_loo_rewards_permutation_equivariant(x, rnd):
    d = x.shape[1]
    ref = mp(np.zeros(d), np.ones(d))
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    r = loo_batch_rewards(x, ref)
    rp = loo_batch_rewards(x[perm], ref)
    np.testing.assert_allclose(rp, r[perm], rtol=1e-9, atol=1e-7)


# --- EMA -------------------------------------------------------------------

def test_ema_midpoint_and_fixed_point():
    s = ema_update(EmaMomentState(), np.zeros(1), np.ones(1))
    s = ema_update(s, np.array([2.0]), np.array([5.0]))
    np.testing.assert_array_equal(s.mu, [1.0])
    np.testing.assert_array_equal(s.m2, [3.0])
    same = ema_update(s, s.mu, s.m2)
    np.testing.assert_array_equal(same.mu, s.mu)
    np.testing.assert_array_equal(same.m2, s.m2)


def test_ema_cold_start_adopts_batch():
    s = ema_update(EmaMomentState(alpha=0.5), np.array([3.0, 1.0]), np.array([10.0, 2.0]))
    assert s.initialized
    np.testing.assert_array_equal(s.mu, [3.0, 1.0])


def test_ema_three_step_recurrence():
    a = 0.5
    mus = [np.array([1.0]), np.array([4.0]), np.array([-2.0])]
    s = EmaMomentState(alpha=a)
    for m in mus:
        s = ema_update(s, m, m * m + 1)
    expect = (1 - a) * ((1 - a) * 1.0 + a * 4.0) + a * -2.0
    assert s.mu[0] == expect


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_ema_rejects_bad_alpha(alpha):
    with pytest.raises(ValueError):
        EmaMomentState(alpha=alpha)


def test_ema_dimension_mismatch():
    s = ema_update(EmaMomentState(), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        ema_update(s, np.zeros(3), np.ones(3))


def test_ema_loo_brute_force_small(rng):
    ref = mp(rng.normal(2), 0.5 + rng.uniform(2))
    state, prev = EmaMomentState(alpha=0.5), None
    for _ in range(3):
        x = rng.normal((6, 2)) + 0.3
        got, state = ema_loo_rewards(state, x, ref)
        want, prev = oracles.ema_loo_rewards(x.tolist(), prev, ref.mu.tolist(),
                                             ref.sigma.tolist())
        np.testing.assert_allclose(got, want, atol=1e-10, rtol=0)
        np.testing.assert_allclose(state.mu, prev[0], atol=1e-14)


def test_ema_loo_cold_start_equals_batch_loo(rng):
    x = rng.normal((10, 3))
    ref = mp(np.zeros(3), np.ones(3))
    r, _ = ema_loo_rewards(EmaMomentState(), x, ref)
    np.testing.assert_allclose(r, loo_batch_rewards(x, ref), atol=1e-12)


def test_ema_loo_alpha_near_one_equals_batch_loo(rng):
    ref = mp(np.zeros(3), np.ones(3))
    state = ema_update(EmaMomentState(alpha=1 - 1e-12), rng.normal(3), 2 + rng.uniform(3))
    x = rng.normal((10, 3))
    r, _ = ema_loo_rewards(state, x, ref)
    np.testing.assert_allclose(r, loo_batch_rewards(x, ref), atol=1e-9)


def test_ema_loo_at_optimum_is_flat(rng):
    x = rng.normal((64, 4))
    ref = batch_moments(x)
    state = ema_update(EmaMomentState(), ref.mu, ref.m2)
    r, nxt = ema_loo_rewards(state, x, ref)
    assert fid_diag(ref, nxt.moments()) < 1e-20
    assert np.max(np.abs(r)) < 1e-2


@given(batches(max_n=10, max_d=4), st.floats(0.05, 0.95))
def test_ema_loo_full_path_matches_ema_update(x, alpha):
    d = x.shape[1]
    state = ema_update(EmaMomentState(alpha=alpha), np.ones(d), np.full(d, 3.0))
    before = (state.mu.copy(), state.m2.copy())
    _, nxt = ema_loo_rewards(state, x, mp(np.zeros(d), np.ones(d)))
    m = batch_moments(x)
    direct = ema_update(state, m.mu, m.m2)
    assert np.array_equal(nxt.mu, direct.mu) and np.array_equal(nxt.m2, direct.m2)
    # caller-owned state untouched
    assert np.array_equal(state.mu, before[0]) and np.array_equal(state.m2, before[1])
    assert np.all(nxt.sigma >= math.sqrt(EPS_VAR))


# --- reference moments -----------------------------------------------------

def test_reference_two_point_and_shuffle():
    x = np.array([[0.0, 0.0], [2.0, 2.0], [1.0, 3.0]])
    a = reference_moments_from_samples(x)
    b = reference_moments_from_samples(x[::-1])
    np.testing.assert_allclose(a.mu, b.mu, rtol=1e-15)
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-15)
    m = batch_moments(x[:2], eps_var=0.0)
    np.testing.assert_array_equal(m.sigma, [1, 1])


def test_reference_line_dataset_stable_across_seeds():
    a = reference_moments_from_samples(line_dataset(10_000, 1))
    b = reference_moments_from_samples(line_dataset(10_000, 2))
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=5e-3)
    assert np.max(np.abs(a.mu - b.mu)) < 0.03


def test_reference_json_round_trip(tmp_path, rng):
    ref = batch_moments(rng.normal((20, 5)))
    save_reference(tmp_path / "ref.json", ref, "unit-test", 20)
    back, meta = load_reference(tmp_path / "ref.json")
    np.testing.assert_array_equal(back.mu, ref.mu)
    np.testing.assert_array_equal(back.sigma, ref.sigma)
    assert meta == {"source": "unit-test", "n_samples": 20}

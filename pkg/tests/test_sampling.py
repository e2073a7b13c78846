import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cuprl.cmdp import CmdpModel, SoftmaxPolicy, evaluate_policy, objective, state_values, transition_matrix
from cuprl.envs import random_cmdp
from cuprl.errors import ConfigurationError, UsageError
from cuprl.lambda_returns import exact_gae, lambda_visitation
from cuprl.sampling import (
    TrajectoryBatch,
    build_estimates,
    compute_gae,
    cost_return_estimate,
    default_horizon,
    discounted_returns,
    empirical_kl,
    fit_tabular_value,
    gae_backward,
    lambda_time_weights,
    sample_batch,
    sample_trajectory,
    sampled_surrogate,
    td_errors,
    value_targets,
)


def _setup(seed=0, S=4, A=2, gamma=0.9):
    m = random_cmdp(seed, S, A, gamma=gamma)
    pi = SoftmaxPolicy(np.random.default_rng(seed).standard_normal((S, A)))
    return m, pi


def test_default_horizon():
    H = default_horizon(0.9)
    assert 0.9**H < 1e-6 <= 0.9 ** (H - 1)


def test_single_state_single_action():
    m = CmdpModel([[[1.0]]], [[[0.7]]], [[0.2]], [1.0], 0.9)
    tr = sample_trajectory(m, SoftmaxPolicy.uniform(1, 1), 25, seed=3)
    assert np.array_equal(tr.states, np.zeros(26, dtype=int))
    assert np.array_equal(tr.rewards, np.full(25, 0.7))
    assert np.array_equal(tr.costs, np.full(25, 0.2))
    assert np.array_equal(tr.log_probs_behavior, np.zeros(25))


def test_horizon_and_episode_errors():
    m, pi = _setup()
    with pytest.raises(ConfigurationError):
        sample_trajectory(m, pi, 0, seed=0)
    with pytest.raises(UsageError):
        sample_batch(m, pi, 0, 10, seed=0)


def test_seed_determinism_and_serialization():
    m, pi = _setup(1)
    a = sample_batch(m, pi, 20, 30, seed=7)
    b = sample_batch(m, pi, 20, 30, seed=7)
    assert a.to_json() == b.to_json()
    assert sample_batch(m, pi, 20, 30, seed=8).to_json() != a.to_json()
    back = TrajectoryBatch.from_dict(json.loads(a.to_json()))
    assert back.to_json() == a.to_json()
    t1 = sample_trajectory(m, pi, 30, seed=7, episode=4)
    t2 = sample_trajectory(m, pi, 30, seed=7, episode=4)
    assert t1.states.tobytes() == t2.states.tobytes() and t1.rewards.tobytes() == t2.rewards.tobytes()


def test_batch_episode_matches_standalone_stream():
    m, pi = _setup(2)
    batch = sample_batch(m, pi, 12, 15, seed=99)
    for i in (0, 5, 11):
        tr = sample_trajectory(m, pi, 15, seed=99, episode=i)
        bt = batch.trajectory(i)
        for f in ("states", "actions", "rewards", "costs", "log_probs_behavior"):
            assert np.array_equal(getattr(tr, f), getattr(bt, f))


def test_trajectory_invariants():
    m, pi = _setup(3)
    b = sample_batch(m, pi, 50, 20, seed=1)
    s, a = b.states[:, :-1], b.actions
    assert np.allclose(b.log_probs_behavior, pi.log_probs[s, a])
    assert np.all(m.transition[s, a, b.states[:, 1:]] > 0)
    assert np.all(m.rho0[b.states[:, 0]] > 0)


def test_state_frequencies_match_stationary_distribution():
    # Dirichlet chains mix within a few steps; after 40 steps each independent
    # episode's final state is a draw from the stationary distribution.
    m, pi = _setup(4, S=5, A=3)
    P = transition_matrix(m, pi)
    w, vecs = np.linalg.eig(P.T)
    mu = np.real(vecs[:, np.argmin(np.abs(w - 1))])
    mu /= mu.sum()
    n = 100_000
    b = sample_batch(m, pi, n, 40, seed=5)
    freq = np.bincount(b.states[:, -1], minlength=5) / n
    assert np.all(np.abs(freq - mu) <= 3 * np.sqrt(mu * (1 - mu) / n))


def _forward_gae(deltas, gamma, lam):
    T = len(deltas)
    return np.array([sum((gamma * lam) ** (j - t) * deltas[j] for j in range(t, T)) for t in range(T)])


@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.3, 0.9, 0.95, 1.0]))
def test_gae_backward_equals_forward_sum(seed, lam):
    m, pi = _setup(seed % 50, S=3)
    v = np.random.default_rng(seed).standard_normal(3)
    tr = sample_trajectory(m, pi, 40, seed=seed)
    for signal, x in (("reward", tr.rewards), ("cost", tr.costs)):
        d = td_errors(x, tr.states, v, m.gamma)
        got = compute_gae(tr, v, m.gamma, lam, signal)
        assert np.max(np.abs(got - _forward_gae(d, m.gamma, lam))) < 1e-12


def test_td_error_indexing():
    m, pi = _setup(6)
    tr = sample_trajectory(m, pi, 5, seed=0)
    v = np.arange(4.0)
    d = td_errors(tr.rewards, tr.states, v, 0.9)
    for t in range(5):
        assert d[t] == tr.rewards[t] + 0.9 * v[tr.states[t + 1]] - v[tr.states[t]]


def test_gae_lambda_zero_and_one():
    m, pi = _setup(7)
    v = np.random.default_rng(0).standard_normal(4)
    tr = sample_trajectory(m, pi, 30, seed=2)
    d = td_errors(tr.rewards, tr.states, v, m.gamma)
    assert np.array_equal(compute_gae(tr, v, m.gamma, 0.0), d)
    # lambda = 1 telescopes to the Monte-Carlo advantage with a bootstrap at s_T
    T = 30
    g = discounted_returns(tr.rewards, m.gamma)
    mc = g + m.gamma ** (T - np.arange(T)) * v[tr.states[-1]] - v[tr.states[:-1]]
    assert np.allclose(compute_gae(tr, v, m.gamma, 1.0), mc, atol=1e-12)


def test_compute_gae_rejects_short_value_vector():
    m, pi = _setup(8)
    tr = sample_trajectory(m, pi, 30, seed=0)
    with pytest.raises(ConfigurationError):
        compute_gae(tr, np.zeros(1), m.gamma, 0.5)


def test_value_targets():
    m, pi = _setup(9)
    tr = sample_trajectory(m, pi, 20, seed=1)
    v = np.random.default_rng(1).standard_normal(4)
    assert np.array_equal(value_targets(np.zeros(20), v, tr), v[tr.states[:-1]])
    tgt = value_targets(compute_gae(tr, np.zeros(4), m.gamma, 1.0), np.zeros(4), tr)
    direct = [sum(m.gamma ** (j - t) * tr.rewards[j] for j in range(t, 20)) for t in range(20)]
    assert np.allclose(tgt, direct, atol=1e-12)


def test_fit_tabular_value_basics():
    m, pi = _setup(10, S=6)
    b = sample_batch(m, pi, 3, 4, seed=0)
    prev = np.arange(6.0)
    fitted = fit_tabular_value(b, np.full(b.actions.shape, 2.5), prev)
    seen = np.zeros(6, dtype=bool)
    seen[b.states[:, :-1].ravel()] = True
    assert np.array_equal(fitted[seen], np.full(seen.sum(), 2.5))
    assert np.array_equal(fitted[~seen], prev[~seen])
    one = sample_batch(m, pi, 1, 1, seed=3)
    assert fit_tabular_value(one, [[7.0]], prev)[one.states[0, 0]] == 7.0


def test_fit_tabular_true_value_fixed_point():
    # lambda = 1 targets with the true V have conditional mean V(s_t) at every t.
    m, pi = _setup(11, S=4)
    v = state_values(m, pi)
    n, T = 4000, 25
    b = sample_batch(m, pi, n, T, seed=2)
    tgt = value_targets(compute_gae(b, v, m.gamma, 1.0), v, b)
    fitted = fit_tabular_value(b, tgt, np.zeros(4))
    # cluster-robust standard error: visits within one episode are correlated
    s = b.states[:, :-1]
    for k in range(4):
        mask = s == k
        cnt = mask.sum(axis=1)
        tot = np.where(mask, tgt, 0.0).sum(axis=1)
        resid = tot - fitted[k] * cnt
        se = math.sqrt(np.sum(resid**2)) / cnt.sum()
        assert abs(fitted[k] - v[k]) <= 3 * se


def test_cost_return_estimate():
    m, pi = _setup(12)
    m0 = CmdpModel(m.transition, m.reward, np.zeros_like(m.cost), m.rho0, m.gamma)
    assert cost_return_estimate(sample_batch(m0, pi, 5, 10, seed=0), 0.9) == 0.0
    loop = CmdpModel([[[1.0]]], [[[0.0]]], [[1.0]], [1.0], 0.9)
    est = cost_return_estimate(sample_batch(loop, SoftmaxPolicy.uniform(1, 1), 1, 1000, seed=0), 0.9)
    assert abs(est - 10.0) <= 0.9**1000 / 0.1 + 1e-12
    with pytest.raises(UsageError):
        cost_return_estimate([], 0.9)


def test_cost_return_monte_carlo():
    m, pi = _setup(13, S=5, A=3)
    n = 10_000
    b = sample_batch(m, pi, n, default_horizon(m.gamma), seed=4)
    per = b.costs @ m.gamma ** np.arange(b.horizon)
    assert abs(per.mean() - objective(m, pi, "cost")) <= 3 * per.std(ddof=1) / math.sqrt(n)
    assert cost_return_estimate(b, m.gamma) == pytest.approx(per.mean(), rel=1e-14)


def test_empirical_kl_closed_form():
    P = np.ones((1, 2, 1))
    m = CmdpModel(P, np.zeros((1, 2, 1)), np.zeros((1, 2)), [1.0], 0.9)
    pa = SoftmaxPolicy.from_probs([[0.7, 0.3]])
    pb = SoftmaxPolicy.from_probs([[0.5, 0.5]])
    b = sample_batch(m, pa, 3, 10, seed=0)
    want = 0.7 * math.log(1.4) + 0.3 * math.log(0.6)
    assert empirical_kl(b, pa, pb) == pytest.approx(want, abs=1e-12)
    assert round(want, 5) == 0.08228
    assert empirical_kl(b, pa, pa) == 0.0


def test_empirical_kl_monte_carlo():
    m, pa = _setup(14, S=4, A=3)
    pb = SoftmaxPolicy(pa.theta + np.random.default_rng(1).standard_normal((4, 3)))
    kl = np.sum(pa.probs * (pa.log_probs - pb.log_probs), axis=1)
    T, n = 20, 5000
    P = transition_matrix(m, pa)
    occ, x = np.zeros(4), m.rho0.copy()
    for _ in range(T):
        occ += x / T
        x = P.T @ x
    b = sample_batch(m, pa, n, T, seed=6)
    per = kl[b.states[:, :-1]].mean(axis=1)
    assert empirical_kl(b, pa, pb) == pytest.approx(per.mean(), rel=1e-12)
    assert abs(per.mean() - occ @ kl) <= 3 * per.std(ddof=1) / math.sqrt(n)


@pytest.mark.parametrize("lam", [0.0, 0.5, 0.95, 1.0])
def test_lambda_time_weights_reproduce_d_lambda(lam):
    m, pi = _setup(15)
    T = 600
    w = lambda_time_weights(T, m.gamma, lam)
    P = transition_matrix(m, pi)
    d, x = np.zeros(4), m.rho0.copy()
    for t in range(T):
        d += w[t] * x
        x = P.T @ x
    assert np.allclose(d, lambda_visitation(m, pi, lam).dist, atol=1e-12)


def test_estimator_batch_fields():
    m, pi = _setup(16)
    b = sample_batch(m, pi, 30, 40, seed=0)
    est = build_estimates(b, np.zeros(4), np.zeros(4), m.gamma, 0.9)
    assert np.all(np.isfinite(est.adv_hat)) and np.all(np.isfinite(est.cost_adv_hat))
    assert est.j_cost_hat >= 0
    assert est.state_weights(4).sum() == pytest.approx(lambda_time_weights(40, m.gamma, 0.9).sum())


def test_sampled_surrogate_converges_to_exact():
    m, pi_old = _setup(17, S=4, A=3)
    pi_new = SoftmaxPolicy(pi_old.theta + 0.3 * np.random.default_rng(2).standard_normal((4, 3)))
    lam = 0.9
    v = state_values(m, pi_old)
    c = state_values(m, pi_old, "cost")
    b = sample_batch(m, pi_old, 10_000, default_horizon(m.gamma), seed=8)
    est = build_estimates(b, v, c, m.gamma, lam)
    d = lambda_visitation(m, pi_old, lam).dist
    for signal in ("reward", "cost"):
        exact = d @ np.sum(pi_new.probs * exact_gae(m, pi_old, lam, signal).values, axis=1)
        mean, sem = sampled_surrogate(est, pi_new, signal)
        assert abs(mean - exact) <= 3 * sem


def test_gae_backward_is_vectorized():
    d = np.random.default_rng(0).standard_normal((3, 7))
    rows = np.stack([gae_backward(r, 0.9, 0.7) for r in d])
    assert np.array_equal(gae_backward(d, 0.9, 0.7), rows)
    assert np.array_equal(discounted_returns(d, 0.9), gae_backward(d, 0.9, 1.0))


def test_exact_advantage_sanity():
    # the true-V advantage used as the surrogate oracle is centred under pi_old
    m, pi = _setup(18)
    assert np.allclose(np.sum(pi.probs * evaluate_policy(m, pi).adv, axis=1), 0.0, atol=1e-12)

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cuprl.cmdp import (
    CmdpModel,
    SoftmaxPolicy,
    discounted_visitation,
    evaluate_policy,
    reward_vector,
    state_values,
    transition_matrix,
)
from cuprl.envs import random_cmdp
from cuprl.errors import ConfigurationError, DomainError
from cuprl.lambda_returns import (
    exact_gae,
    expected_td,
    gamma_tilde,
    lambda_dynamics,
    lambda_objective_identity,
    lambda_reward,
    lambda_transition,
    lambda_visitation,
    td_decomposition_identity,
    td_table,
)

from conftest import instances, lambdas


def _instance(seed, S=5, A=3, gamma=0.9):
    rng = np.random.default_rng(seed)
    return random_cmdp(seed, S, A, gamma=gamma), SoftmaxPolicy(rng.standard_normal((S, A))), rng


def test_gamma_tilde_values():
    assert gamma_tilde(0.99, 0.0) == 0.99
    assert gamma_tilde(0.99, 1.0) == 0.0
    assert gamma_tilde(0.9, 0.5) == pytest.approx(0.45 / 0.55, rel=1e-15)


@pytest.mark.parametrize("g,l", [(0.0, 0.5), (1.0, 0.5), (0.9, -0.1), (0.9, 1.1)])
def test_gamma_tilde_domain(g, l):
    with pytest.raises(DomainError):
        gamma_tilde(g, l)


@given(st.floats(0.01, 0.99), st.floats(0.0, 1.0))
def test_gamma_tilde_range(g, l):
    gt = gamma_tilde(g, l)
    assert 0.0 <= gt <= g + 1e-15


@given(instances(), lambdas)
def test_lambda_operators_are_distributions(inst, lam):
    m, pi, _ = inst
    Pl = lambda_transition(m, pi, lam)
    assert np.allclose(Pl.sum(axis=1), 1.0, atol=1e-10) and np.all(Pl > -1e-12)
    d = lambda_visitation(m, pi, lam)
    assert d.dist.sum() == pytest.approx(1.0, abs=1e-10) and np.all(d.dist > -1e-12)


def test_lambda_zero_reductions():
    m, pi, _ = _instance(0)
    assert np.allclose(lambda_transition(m, pi, 0.0), transition_matrix(m, pi), atol=1e-12, rtol=0)
    assert np.allclose(lambda_reward(m, pi, 0.0), reward_vector(m, pi), atol=1e-12, rtol=0)
    assert np.allclose(lambda_visitation(m, pi, 0.0).dist, discounted_visitation(m, pi).dist, atol=1e-12, rtol=0)


def test_lambda_one_collapses_to_rho0():
    m, pi, _ = _instance(1)
    assert np.allclose(lambda_visitation(m, pi, 1.0).dist, m.rho0, atol=1e-15)


def test_single_state_and_constant_reward():
    m = CmdpModel([[[1.0]]], [[[1.0]]], [[0.0]], [1.0], 0.9)
    pi = SoftmaxPolicy.uniform(1, 1)
    for lam in (0.0, 0.4, 1.0):
        assert np.allclose(lambda_transition(m, pi, lam), [[1.0]])
        assert lambda_reward(m, pi, lam)[0] == pytest.approx(1 / (1 - 0.9 * lam))
        j, jl = lambda_objective_identity(m, pi, lam)
        assert j == pytest.approx(10.0) and jl == pytest.approx(10.0)


def test_operators_match_power_series():
    m, pi, _ = _instance(2, S=6)
    lam, gl = 0.7, 0.9 * 0.7
    P, r = transition_matrix(m, pi), reward_vector(m, pi)
    Pl, rl, Pt = np.zeros((6, 6)), np.zeros(6), np.eye(6)
    for t in range(2001):
        Pl += (1 - gl) * gl**t * Pt @ P
        rl += gl**t * Pt @ r
        Pt = Pt @ P
    assert np.allclose(lambda_transition(m, pi, lam), Pl, atol=1e-8)
    assert np.allclose(lambda_reward(m, pi, lam), rl, atol=1e-8)


def test_visitation_matches_double_series():
    m, pi, _ = _instance(3, S=4)
    lam = 0.5
    gt = gamma_tilde(0.9, lam)
    Pl = lambda_transition(m, pi, lam)
    d, x = np.zeros(4), m.rho0.copy()
    for t in range(2001):
        d += (1 - gt) * gt**t * x
        x = Pl.T @ x
    assert np.allclose(lambda_visitation(m, pi, lam).dist, d, atol=1e-8)


@given(instances(), lambdas)
def test_lambda_bellman_fixed_point(inst, lam):
    m, pi, _ = inst
    v = state_values(m, pi)
    gt = gamma_tilde(m.gamma, lam)
    resid = v - lambda_reward(m, pi, lam) - gt * lambda_transition(m, pi, lam) @ v
    assert np.max(np.abs(resid)) < 1e-8 * max(1.0, np.abs(v).max())


@given(instances(), lambdas)
def test_objective_identities(inst, lam):
    m, pi, rng = inst
    j, jl = lambda_objective_identity(m, pi, lam)
    scale = 1.0 / (1 - m.gamma)
    assert abs(j - jl) < 1e-8 * scale
    for phi in (np.zeros(m.n_states), state_values(m, pi), 5 * rng.standard_normal(m.n_states)):
        jp, jd = td_decomposition_identity(m, pi, lam, phi)
        assert abs(jp - jd) < 1e-8 * scale
        jc, jcd = td_decomposition_identity(m, pi, lam, phi, "cost")
        assert abs(jc - jcd) < 1e-8 * scale


def test_zero_reward_identity():
    m, pi, _ = _instance(4)
    m0 = CmdpModel(m.transition, np.zeros_like(m.reward), m.cost, m.rho0, m.gamma)
    assert lambda_objective_identity(m0, pi, 0.6) == (0.0, 0.0)


def test_true_value_td_vanishes():
    m, pi, _ = _instance(5)
    assert np.max(np.abs(expected_td(m, pi, state_values(m, pi)))) < 1e-12


@given(instances(), lambdas)
def test_exact_gae_true_value_is_advantage(inst, lam):
    m, pi, _ = inst
    for signal in ("reward", "cost"):
        g = exact_gae(m, pi, lam, signal)
        assert g.baseline == "true_value"
        assert np.allclose(g.values, evaluate_policy(m, pi, signal).adv, atol=1e-8)
        assert np.max(np.abs(np.sum(pi.probs * g.values, axis=1))) < 1e-8


def test_exact_gae_lambda_zero_is_one_step_td():
    m, pi, rng = _instance(6)
    phi = rng.standard_normal(5)
    assert np.allclose(exact_gae(m, pi, 0.0, baseline=phi).values, td_table(m, phi), atol=1e-14)


def test_exact_gae_matches_rollout_oracle():
    # g(s,a) = sum_l (gamma lam)^l E[delta_l | s_0 = s, a_0 = a], with the expectation built from
    # explicit rollout matrices: after the first step the state distribution is P(.|s,a) P_pi^{l-1}.
    m, pi, rng = _instance(7, S=4, A=2)
    lam, phi = 0.8, state_values(m, pi) + rng.standard_normal(4)
    delta_sa = td_table(m, phi)
    delta_s = expected_td(m, pi, phi)
    P = transition_matrix(m, pi)
    g = delta_sa.copy()
    M = m.transition.copy()  # [s, a, s'] distribution of s_l
    gl = m.gamma * lam
    for l in range(1, 400):
        g += gl**l * M @ delta_s
        M = M @ P
    assert np.allclose(exact_gae(m, pi, lam, baseline=phi).values, g, atol=1e-6)


def test_exact_gae_bad_baseline():
    m, pi, _ = _instance(8)
    with pytest.raises(ConfigurationError):
        exact_gae(m, pi, 0.5, baseline="nope")
    with pytest.raises(ConfigurationError):
        exact_gae(m, pi, 0.5, baseline=np.zeros(3))


def test_lambda_dynamics_json():
    m, pi, _ = _instance(9, S=3, A=2)
    dyn = lambda_dynamics(m, pi, 0.5)
    data = json.loads(dyn.to_json())
    assert data["gamma_tilde"] == pytest.approx(gamma_tilde(0.9, 0.5))
    assert np.allclose(data["p_lambda"], lambda_transition(m, pi, 0.5))
    assert np.allclose(data["c_lambda"], lambda_reward(m, pi, 0.5, "cost"))

"""lambda-return dynamics and exact generalized advantage estimates.

The lambda-weighted Bellman operator ``(1 - lam) sum_t lam^t B^{t+1}`` acts like an
ordinary Bellman operator with effective discount ``gamma_tilde``, transition
operator ``P^(lam)`` and reward ``r^(lam)``. Every infinite series here is
evaluated through its resolvent, never summed term by term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from .cmdp import (
    CmdpModel,
    Signal,
    SoftmaxPolicy,
    StateDistribution,
    _check_signal,
    _solve,
    check_policy,
    objective,
    reward_vector,
    state_values,
    transition_matrix,
)
from .errors import ConfigurationError, DomainError


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    return lam


def gamma_tilde(gamma: float, lam: float) -> float:
    """Effective discount gamma (1 - lam) / (1 - gamma lam)."""
    gamma = float(gamma)
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie strictly inside (0, 1), got {gamma}")
    lam = _check_lambda(lam)
    return gamma * (1.0 - lam) / (1.0 - gamma * lam)


def lambda_transition(model: CmdpModel, policy: SoftmaxPolicy, lam: float) -> np.ndarray:
    """P^(lam) = (1 - gamma lam) sum_t (gamma lam)^t P^{t+1} = (1 - gl) (I - gl P)^{-1} P."""
    gl = model.gamma * _check_lambda(lam)
    P = transition_matrix(model, policy)
    return (1.0 - gl) * _solve(np.eye(model.n_states) - gl * P, P)


def lambda_reward(model: CmdpModel, policy: SoftmaxPolicy, lam: float, signal: Signal = "reward") -> np.ndarray:
    """r^(lam) = (I - gamma lam P_pi)^{-1} r_pi."""
    gl = model.gamma * _check_lambda(lam)
    P = transition_matrix(model, policy)
    return _solve(np.eye(model.n_states) - gl * P, reward_vector(model, policy, signal))


def lambda_visitation(model: CmdpModel, policy: SoftmaxPolicy, lam: float) -> StateDistribution:
    """d^lam = (1 - gt) (I - gt P^(lam)^T)^{-1} rho0 with gt = gamma_tilde."""
    gt = gamma_tilde(model.gamma, lam)
    Pl = lambda_transition(model, policy, lam)
    d = (1.0 - gt) * _solve(np.eye(model.n_states) - gt * Pl.T, model.rho0)
    return StateDistribution(dist=d, kind="d_lambda")


@dataclass(frozen=True, eq=False)
class LambdaDynamics:
    lam: float
    gamma_tilde: float
    p_lambda: np.ndarray
    r_lambda: np.ndarray
    c_lambda: np.ndarray
    d_lambda: StateDistribution
    policy: SoftmaxPolicy

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "gamma_tilde": self.gamma_tilde,
            "p_lambda": self.p_lambda.tolist(),
            "r_lambda": self.r_lambda.tolist(),
            "c_lambda": self.c_lambda.tolist(),
            "d_lambda": self.d_lambda.dist.tolist(),
            "theta": self.policy.theta.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def lambda_dynamics(model: CmdpModel, policy: SoftmaxPolicy, lam: float) -> LambdaDynamics:
    check_policy(model, policy)
    return LambdaDynamics(
        lam=_check_lambda(lam),
        gamma_tilde=gamma_tilde(model.gamma, lam),
        p_lambda=lambda_transition(model, policy, lam),
        r_lambda=lambda_reward(model, policy, lam, "reward"),
        c_lambda=lambda_reward(model, policy, lam, "cost"),
        d_lambda=lambda_visitation(model, policy, lam),
        policy=policy,
    )


def lambda_objective_identity(model: CmdpModel, policy: SoftmaxPolicy, lam: float) -> tuple[float, float]:
    """Return (J, <d^lam, r^(lam)> / (1 - gamma_tilde)); the two agree for every lam."""
    gt = gamma_tilde(model.gamma, lam)
    j_lambda = lambda_visitation(model, policy, lam).dist @ lambda_reward(model, policy, lam) / (1.0 - gt)
    return objective(model, policy, "reward"), float(j_lambda)


def td_table(model: CmdpModel, phi, signal: Signal = "reward") -> np.ndarray:
    """Expected one-step TD error per (s, a): E_{s'}[signal + gamma phi(s') - phi(s)]."""
    phi = _state_vector(model, phi, "phi")
    return model.expected_signal(signal) + model.gamma * model.transition @ phi - phi[:, None]


def abs_td_table(model: CmdpModel, phi, signal: Signal = "reward") -> np.ndarray:
    """E_{s'}[|signal + gamma phi(s') - phi(s)|] per (s, a)."""
    phi = _state_vector(model, phi, "phi")
    _check_signal(signal)
    if signal == "cost":
        inst = model.cost[:, :, None] + model.gamma * phi[None, None, :] - phi[:, None, None]
    else:
        inst = model.reward + model.gamma * phi[None, None, :] - phi[:, None, None]
    return np.einsum("sat,sat->sa", model.transition, np.abs(inst))


def expected_td(model: CmdpModel, policy: SoftmaxPolicy, phi, signal: Signal = "reward") -> np.ndarray:
    """delta-bar[s] = sum_a pi(a|s) E_{s'}[signal + gamma phi(s') - phi(s)]."""
    check_policy(model, policy)
    return np.einsum("sa,sa->s", policy.probs, td_table(model, phi, signal))


def td_decomposition_identity(
    model: CmdpModel, policy: SoftmaxPolicy, lam: float, phi, signal: Signal = "reward"
) -> tuple[float, float]:
    """Return (J, E_rho0[phi] + <d^lam, sum_t (gamma lam)^t P^t delta-bar> / (1 - gamma_tilde))."""
    phi = _state_vector(model, phi, "phi")
    gl = model.gamma * _check_lambda(lam)
    gt = gamma_tilde(model.gamma, lam)
    P = transition_matrix(model, policy)
    td_sum = _solve(np.eye(model.n_states) - gl * P, expected_td(model, policy, phi, signal))
    d = lambda_visitation(model, policy, lam).dist
    j_dec = model.rho0 @ phi + d @ td_sum / (1.0 - gt)
    return objective(model, policy, signal), float(j_dec)


@dataclass(frozen=True, eq=False)
class GaeTable:
    values: np.ndarray
    lam: float
    signal: Signal
    baseline: Literal["true_value", "supplied_estimate"]


Baseline = Union[Literal["true_value"], np.ndarray]


def exact_gae(
    model: CmdpModel,
    policy: SoftmaxPolicy,
    lam: float,
    signal: Signal = "reward",
    baseline: Baseline = "true_value",
) -> GaeTable:
    """Conditional expectation of the GAE estimator given (s_t, a_t) = (s, a).

    Solves g = delta-bar + gamma lam M g with M[(s,a), (s',a')] = P(s'|s,a) pi(a'|s').
    ``baseline`` is either ``"true_value"`` (exact V or V^c of ``policy``) or any
    state vector used as the value estimate inside the TD errors.
    """
    check_policy(model, policy)
    lam = _check_lambda(lam)
    if isinstance(baseline, str):
        if baseline != "true_value":
            raise ConfigurationError(f"unknown baseline {baseline!r}")
        phi = state_values(model, policy, signal)
        kind = "true_value"
    else:
        phi = _state_vector(model, baseline, "baseline")
        kind = "supplied_estimate"
    S, A = model.n_states, model.n_actions
    delta = td_table(model, phi, signal).reshape(S * A)
    M = np.einsum("sat,tb->satb", model.transition, policy.probs).reshape(S * A, S * A)
    g = _solve(np.eye(S * A) - model.gamma * lam * M, delta)
    return GaeTable(values=g.reshape(S, A), lam=lam, signal=signal, baseline=kind)


def _state_vector(model: CmdpModel, x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_states,):
        raise ConfigurationError(f"{name} must have length {model.n_states}, got shape {x.shape}")
    return x

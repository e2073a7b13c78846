"""Finite constrained MDPs, softmax policies and exact policy evaluation.

Conventions: ``transition[s, a, s']`` is P(s'|s,a), ``reward[s, a, s']`` is
r(s'|s,a), ``cost[s, a]`` is c(s,a). Every state-to-state matrix is
row-stochastic, so distributions over states propagate through the transpose.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ConfigurationError, NumericalError

Signal = Literal["reward", "cost"]

STOCHASTIC_ATOL = 1e-12


def _check_signal(signal: str) -> None:
    if signal not in ("reward", "cost"):
        raise ConfigurationError(f"signal must be 'reward' or 'cost', got {signal!r}")


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CmdpModel:
    """A finite CMDP with a single cost constraint ``J^c <= cost_limit``."""

    transition: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    rho0: np.ndarray
    gamma: float
    cost_limit: float = 0.0

    def __post_init__(self):
        for name in ("transition", "reward", "cost", "rho0"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "cost_limit", float(self.cost_limit))
        self.validate()

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def validate(self) -> None:
        P = self.transition
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ConfigurationError(f"transition must have shape [S, A, S], got {P.shape}")
        S, A = P.shape[:2]
        if self.reward.shape != (S, A, S):
            raise ConfigurationError(f"reward must have shape {(S, A, S)}, got {self.reward.shape}")
        if self.cost.shape != (S, A):
            raise ConfigurationError(f"cost must have shape {(S, A)}, got {self.cost.shape}")
        if self.rho0.shape != (S,):
            raise ConfigurationError(f"rho0 must have length {S}, got shape {self.rho0.shape}")
        for name in ("transition", "reward", "cost", "rho0"):
            bad = np.argwhere(~np.isfinite(getattr(self, name)))
            if bad.size:
                raise ConfigurationError(f"{name}{_index(bad[0])} is not finite")
        neg = np.argwhere(P < 0)
        if neg.size:
            raise ConfigurationError(f"transition{_index(neg[0])} is negative")
        sums = P.sum(axis=2)
        off = np.argwhere(np.abs(sums - 1.0) > STOCHASTIC_ATOL)
        if off.size:
            s, a = off[0]
            raise ConfigurationError(
                f"transition[{s}][{a}] sums to {sums[s, a]!r}, expected 1"
            )
        neg = np.argwhere(self.cost < 0)
        if neg.size:
            raise ConfigurationError(f"cost{_index(neg[0])} is negative")
        neg = np.argwhere(self.rho0 < 0)
        if neg.size:
            raise ConfigurationError(f"rho0{_index(neg[0])} is negative")
        if abs(self.rho0.sum() - 1.0) > STOCHASTIC_ATOL:
            raise ConfigurationError(f"rho0 sums to {self.rho0.sum()!r}, expected 1")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if not self.cost_limit >= 0.0:
            raise ConfigurationError(f"cost_limit must be >= 0, got {self.cost_limit}")

    def expected_signal(self, signal: Signal = "reward") -> np.ndarray:
        """One-step expected signal per (s, a): E_{s'}[r(s'|s,a)] or c(s, a)."""
        _check_signal(signal)
        if signal == "cost":
            return np.array(self.cost)
        return np.einsum("sat,sat->sa", self.transition, self.reward)

    def with_cost_limit(self, cost_limit: float) -> "CmdpModel":
        return CmdpModel(self.transition, self.reward, self.cost, self.rho0, self.gamma, cost_limit)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "cost_limit": self.cost_limit,
            "rho0": self.rho0.tolist(),
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "cost": self.cost.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CmdpModel":
        required = ("n_states", "n_actions", "gamma", "rho0", "transition", "reward", "cost")
        missing = [k for k in required if k not in data]
        if missing:
            raise ConfigurationError(f"model is missing field(s): {', '.join(missing)}")
        S, A = int(data["n_states"]), int(data["n_actions"])
        try:
            P = np.asarray(data["transition"], dtype=float)
            R = np.asarray(data["reward"], dtype=float)
            C = np.asarray(data["cost"], dtype=float)
            rho0 = np.asarray(data["rho0"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"model arrays are ragged or non-numeric: {exc}") from exc
        if P.shape != (S, A, S):
            raise ConfigurationError(
                f"transition has shape {P.shape} but n_states={S}, n_actions={A}"
            )
        return cls(P, R, C, rho0, data["gamma"], data.get("cost_limit", 0.0))


def _index(idx) -> str:
    return "".join(f"[{int(i)}]" for i in idx)


def load_model(path: str | os.PathLike) -> CmdpModel:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return CmdpModel.from_dict(data)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and an atomic rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: CmdpModel, path: str | os.PathLike) -> None:
    atomic_write_text(path, json.dumps(model.to_dict()))


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Tabular softmax policy, pi(a|s) proportional to exp(theta[s, a])."""

    theta: np.ndarray
    probs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ConfigurationError(f"theta must be a [S, A] matrix, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise NumericalError("theta contains non-finite entries")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        z = theta - theta.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def from_probs(cls, probs) -> "SoftmaxPolicy":
        """Logits reproducing a strictly positive probability table."""
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise ConfigurationError("softmax policies need strictly positive probabilities")
        return cls(np.log(probs))

    @property
    def log_probs(self) -> np.ndarray:
        z = self.theta - self.theta.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta.shape


def check_policy(model: CmdpModel, policy: SoftmaxPolicy) -> None:
    if policy.shape != (model.n_states, model.n_actions):
        raise ConfigurationError(
            f"policy shape {policy.shape} does not match model "
            f"({model.n_states} states, {model.n_actions} actions)"
        )


@dataclass(frozen=True, eq=False)
class PolicyEvaluation:
    v: np.ndarray
    q: np.ndarray
    adv: np.ndarray
    signal: Signal


@dataclass(frozen=True, eq=False)
class StateDistribution:
    dist: np.ndarray
    kind: Literal["rho0", "d_rho0", "d_lambda"]


def transition_matrix(model: CmdpModel, policy: SoftmaxPolicy) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)."""
    check_policy(model, policy)
    return np.einsum("sa,sat->st", policy.probs, model.transition)


def reward_vector(model: CmdpModel, policy: SoftmaxPolicy, signal: Signal = "reward") -> np.ndarray:
    """Expected one-step signal under the policy, r_pi[s] (or c_pi[s])."""
    check_policy(model, policy)
    return np.einsum("sa,sa->s", policy.probs, model.expected_signal(signal))


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular linear system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError("linear solve produced non-finite values")
    return x


def state_values(model: CmdpModel, policy: SoftmaxPolicy, signal: Signal = "reward") -> np.ndarray:
    P = transition_matrix(model, policy)
    return _solve(np.eye(model.n_states) - model.gamma * P, reward_vector(model, policy, signal))


def action_values(model: CmdpModel, v: np.ndarray, signal: Signal = "reward") -> np.ndarray:
    """Q[s, a] = E_{s'}[signal + gamma v(s')] for an arbitrary state vector ``v``."""
    return model.expected_signal(signal) + model.gamma * model.transition @ v


def evaluate_policy(model: CmdpModel, policy: SoftmaxPolicy, signal: Signal = "reward") -> PolicyEvaluation:
    v = state_values(model, policy, signal)
    q = action_values(model, v, signal)
    return PolicyEvaluation(v=v, q=q, adv=q - v[:, None], signal=signal)


def discounted_visitation(model: CmdpModel, policy: SoftmaxPolicy) -> StateDistribution:
    """d^{rho0} = (1 - gamma) (I - gamma P_pi^T)^{-1} rho0."""
    P = transition_matrix(model, policy)
    g = model.gamma
    d = (1.0 - g) * _solve(np.eye(model.n_states) - g * P.T, model.rho0)
    return StateDistribution(dist=d, kind="d_rho0")


def objective(model: CmdpModel, policy: SoftmaxPolicy, signal: Signal = "reward") -> float:
    """J(pi) = E_{s ~ rho0}[V(s)] for the requested signal."""
    return float(model.rho0 @ state_values(model, policy, signal))

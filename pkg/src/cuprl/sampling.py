"""Trajectory simulation and the sample-based GAE pipeline.

Episodes are simulated in lockstep by inverse-CDF sampling. Episode ``i`` of a
batch with master seed ``m`` draws all of its uniforms from
``SeedSequence(m, spawn_key=(i,))``, so it is reproducible on its own with
``sample_trajectory(..., seed=m, episode=i)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cmdp import CmdpModel, Signal, SoftmaxPolicy, _check_signal, check_policy
from .errors import ConfigurationError, UsageError
from .lambda_returns import _check_lambda, gamma_tilde


def default_horizon(gamma: float, tol: float = 1e-6) -> int:
    """Smallest H with gamma^H < tol."""
    return max(1, math.floor(math.log(tol) / math.log(gamma)) + 1)


def _episode_rng(seed: int, episode: Optional[int]) -> np.random.Generator:
    if episode is None:
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(episode,)))


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # first index with cdf > u; zero-width bins are never chosen
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # [T+1]
    actions: np.ndarray  # [T]
    rewards: np.ndarray
    costs: np.ndarray
    log_probs_behavior: np.ndarray
    seed: int
    episode: Optional[int] = None

    @property
    def horizon(self) -> int:
        return len(self.actions)


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Equal-length episodes stored as [N, T] arrays (states are [N, T+1])."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    log_probs_behavior: np.ndarray
    seed: int

    @property
    def n_episodes(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            self.states[i], self.actions[i], self.rewards[i], self.costs[i],
            self.log_probs_behavior[i], self.seed, i,
        )

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(self.n_episodes)]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "costs": self.costs.tolist(),
            "log_probs_behavior": self.log_probs_behavior.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "TrajectoryBatch":
        return cls(
            np.asarray(data["states"], dtype=int).reshape(len(data["states"]), -1),
            np.asarray(data["actions"], dtype=int).reshape(len(data["actions"]), -1),
            np.asarray(data["rewards"], dtype=float).reshape(len(data["rewards"]), -1),
            np.asarray(data["costs"], dtype=float).reshape(len(data["costs"]), -1),
            np.asarray(data["log_probs_behavior"], dtype=float).reshape(len(data["log_probs_behavior"]), -1),
            int(data["seed"]),
        )


def _simulate(model: CmdpModel, policy: SoftmaxPolicy, u: np.ndarray):
    """Run N episodes from pre-drawn uniforms u[N, 2T+1]."""
    N, T = u.shape[0], (u.shape[1] - 1) // 2
    states = np.empty((N, T + 1), dtype=int)
    actions = np.empty((N, T), dtype=int)
    rewards = np.empty((N, T))
    costs = np.empty((N, T))
    logp = np.empty((N, T))
    pi_cdf = np.cumsum(policy.probs, axis=1)
    p_cdf = np.cumsum(model.transition, axis=2)
    log_pi = policy.log_probs
    s = _inverse_cdf(np.broadcast_to(np.cumsum(model.rho0), (N, model.n_states)), u[:, 0])
    states[:, 0] = s
    for t in range(T):
        a = _inverse_cdf(pi_cdf[s], u[:, 1 + 2 * t])
        s2 = _inverse_cdf(p_cdf[s, a], u[:, 2 + 2 * t])
        actions[:, t] = a
        rewards[:, t] = model.reward[s, a, s2]
        costs[:, t] = model.cost[s, a]
        logp[:, t] = log_pi[s, a]
        states[:, t + 1] = s2
        s = s2
    return states, actions, rewards, costs, logp


def _check_horizon(horizon: int) -> int:
    if int(horizon) < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    return int(horizon)


def sample_trajectory(
    model: CmdpModel, policy: SoftmaxPolicy, horizon: int, seed: int, episode: Optional[int] = None
) -> Trajectory:
    check_policy(model, policy)
    T = _check_horizon(horizon)
    u = _episode_rng(seed, episode).random(2 * T + 1)[None]
    s, a, r, c, lp = _simulate(model, policy, u)
    return Trajectory(s[0], a[0], r[0], c[0], lp[0], seed, episode)


def sample_batch(
    model: CmdpModel, policy: SoftmaxPolicy, episodes: int, horizon: int, seed: int
) -> TrajectoryBatch:
    check_policy(model, policy)
    T = _check_horizon(horizon)
    if episodes < 1:
        raise UsageError(f"episodes must be >= 1, got {episodes}")
    u = np.stack([_episode_rng(seed, i).random(2 * T + 1) for i in range(episodes)])
    return TrajectoryBatch(*_simulate(model, policy, u), seed=seed)


def td_errors(signal_values, states, value_estimate, gamma: float) -> np.ndarray:
    """delta_t = x_t + gamma V(s_{t+1}) - V(s_t) along the last axis."""
    v = np.asarray(value_estimate, dtype=float)
    states = np.asarray(states)
    return np.asarray(signal_values) + gamma * v[states[..., 1:]] - v[states[..., :-1]]


def gae_backward(deltas: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """A_t = delta_t + gamma lam A_{t+1}, A_{T-1} = delta_{T-1}, along the last axis."""
    deltas = np.asarray(deltas, dtype=float)
    adv = np.empty_like(deltas)
    gl = gamma * lam
    acc = np.zeros(deltas.shape[:-1])
    for t in range(deltas.shape[-1] - 1, -1, -1):
        acc = deltas[..., t] + gl * acc
        adv[..., t] = acc
    return adv


def _signal_of(traj, signal: Signal):
    _check_signal(signal)
    return traj.costs if signal == "cost" else traj.rewards


def compute_gae(traj, value_estimate, gamma: float, lam: float, signal: Signal = "reward") -> np.ndarray:
    """Per-step GAE for a Trajectory or a TrajectoryBatch, bootstrapped with V(s_T)."""
    lam = _check_lambda(lam)
    v = np.asarray(value_estimate, dtype=float)
    if v.ndim != 1 or v.shape[0] <= int(np.max(traj.states)):
        raise ConfigurationError(f"value estimate of shape {v.shape} does not cover visited states")
    return gae_backward(td_errors(_signal_of(traj, signal), traj.states, v, gamma), gamma, lam)


def value_targets(adv_hat, value_estimate, traj) -> np.ndarray:
    return np.asarray(adv_hat) + np.asarray(value_estimate)[np.asarray(traj.states)[..., :-1]]


def discounted_returns(x: np.ndarray, gamma: float) -> np.ndarray:
    """G_t = sum_{j>=t} gamma^{j-t} x_j along the last axis."""
    return gae_backward(x, gamma, 1.0)


def lambda_time_weights(horizon: int, gamma: float, lam: float) -> np.ndarray:
    """Weights w_t with E_{d^lam}[f] = sum_t w_t E[f(s_t)]: w_0 = 1 - gt, w_t = (1 - gt)(1 - lam) gamma^t."""
    gt = gamma_tilde(gamma, lam)
    w = (1.0 - gt) * (1.0 - lam) * gamma ** np.arange(horizon, dtype=float)
    w[0] = 1.0 - gt
    return w


def _as_batch(batch) -> TrajectoryBatch:
    if isinstance(batch, EstimatorBatch):
        batch = batch.trajectories
    if isinstance(batch, Trajectory):
        batch = [batch]
    if isinstance(batch, (list, tuple)):
        if not batch:
            raise UsageError("empty batch")
        batch = TrajectoryBatch(
            np.stack([t.states for t in batch]), np.stack([t.actions for t in batch]),
            np.stack([t.rewards for t in batch]), np.stack([t.costs for t in batch]),
            np.stack([t.log_probs_behavior for t in batch]), batch[0].seed,
        )
    if batch.n_episodes == 0:
        raise UsageError("empty batch")
    return batch


def episode_cost_returns(batch, gamma: float) -> np.ndarray:
    b = _as_batch(batch)
    return b.costs @ (gamma ** np.arange(b.horizon, dtype=float))


def cost_return_estimate(batch, gamma: float) -> float:
    """Mean over episodes of sum_t gamma^t c_t."""
    return float(episode_cost_returns(batch, gamma).mean())


def fit_tabular_value(batch, targets, previous) -> np.ndarray:
    """Per-state mean of the targets; unvisited states keep ``previous``."""
    b = _as_batch(batch)
    prev = np.asarray(previous, dtype=float)
    s = b.states[:, :-1].ravel()
    tgt = np.asarray(targets, dtype=float).ravel()
    total = np.bincount(s, weights=tgt, minlength=prev.shape[0])
    count = np.bincount(s, minlength=prev.shape[0])
    out = prev.copy()
    seen = count > 0
    out[seen] = total[seen] / count[seen]
    return out


def _kl_rows(p, q):
    return np.sum(p * (np.log(p) - np.log(q)), axis=-1)


def empirical_kl(batch, pi_a: SoftmaxPolicy, pi_b: SoftmaxPolicy) -> float:
    """Mean over visited steps of KL(pi_a(.|s_t) || pi_b(.|s_t))."""
    b = _as_batch(batch)
    kl = np.sum(pi_a.probs * (pi_a.log_probs - pi_b.log_probs), axis=1)
    return float(kl[b.states[:, :-1]].mean())


@dataclass(frozen=True, eq=False)
class EstimatorBatch:
    trajectories: TrajectoryBatch
    adv_hat: np.ndarray
    cost_adv_hat: np.ndarray
    v_targets: np.ndarray
    c_targets: np.ndarray
    j_cost_hat: float
    weights: np.ndarray  # [N, T] d^lam time weights divided by N
    gamma: float
    lam: float

    def state_weights(self, n_states: int) -> np.ndarray:
        """Empirical d^lam mass per state."""
        s = self.trajectories.states[:, :-1].ravel()
        return np.bincount(s, weights=self.weights.ravel(), minlength=n_states)


def build_estimates(batch: TrajectoryBatch, v_est, c_est, gamma: float, lam: float) -> EstimatorBatch:
    adv = compute_gae(batch, v_est, gamma, lam, "reward")
    cadv = compute_gae(batch, c_est, gamma, lam, "cost")
    w = np.broadcast_to(lambda_time_weights(batch.horizon, gamma, lam) / batch.n_episodes, adv.shape)
    return EstimatorBatch(
        trajectories=batch,
        adv_hat=adv,
        cost_adv_hat=cadv,
        v_targets=value_targets(adv, v_est, batch),
        c_targets=value_targets(cadv, c_est, batch),
        j_cost_hat=cost_return_estimate(batch, gamma),
        weights=np.array(w),
        gamma=gamma,
        lam=lam,
    )


def sampled_surrogate(est: EstimatorBatch, pi_new: SoftmaxPolicy, signal: Signal = "reward") -> tuple[float, float]:
    """Importance-weighted estimate of E_{d^lam_old, pi_new}[A^GAE] and its standard error."""
    b = est.trajectories
    adv = est.cost_adv_hat if signal == "cost" else est.adv_hat
    ratio = np.exp(pi_new.log_probs[b.states[:, :-1], b.actions] - b.log_probs_behavior)
    per_episode = (est.weights * ratio * adv).sum(axis=1) * b.n_episodes
    sem = per_episode.std(ddof=1) / math.sqrt(b.n_episodes) if b.n_episodes > 1 else math.inf
    return float(per_episode.mean()), float(sem)

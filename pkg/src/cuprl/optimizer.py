"""Constrained Update Projection: a reward-improvement step, then a projection back
toward the cost-feasible set, with a positive-part dual update.

Every objective returns ``(value, gradient)`` with the gradient taken analytically
through the softmax. Data is either an ``ExactData`` (closed-form d^lam and GAE
tables of the reference policy) or an ``EstimatorBatch`` (sampled mode).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Literal, Optional, Union

import numpy as np

from .bounds import sup_abs_td, visitation_coefficient
from .cmdp import CmdpModel, SoftmaxPolicy, check_policy, objective, state_values
from .errors import ConfigurationError, NumericalError
from .lambda_returns import exact_gae, gamma_tilde, lambda_visitation
from .sampling import (
    EstimatorBatch,
    build_estimates,
    default_horizon,
    empirical_kl,
    fit_tabular_value,
    sample_batch,
)

KL_CUSP = 1e-12


@dataclass(frozen=True)
class CupConfig:
    alpha: float = 1.0
    beta: float = 0.0
    eta: float = 0.05
    lr: Optional[float] = None  # primal step size; falls back to eta
    clip_epsilon: float = 0.2
    inner_steps: int = 10
    nu_init: float = 0.0
    nu_max: float = 2.0
    lam: float = 0.95
    mode: Literal["exact", "sampled"] = "exact"
    surrogate: Literal["kl_penalty", "clip"] = "kl_penalty"
    schedule: Literal["constant", "geometric"] = "constant"
    decay: float = 1.0  # rho in alpha_k = alpha * rho^k under the geometric schedule
    episodes: int = 64
    horizon: Optional[int] = None
    init_scale: float = 0.1  # std of the seeded initial logits

    def __post_init__(self):
        self.validate()

    @property
    def step_size(self) -> float:
        return self.eta if self.lr is None else self.lr

    def validate(self) -> None:
        checks = [
            ("alpha", self.alpha >= 0, ">= 0"),
            ("beta", self.beta >= 0, ">= 0"),
            ("eta", self.eta > 0, "> 0"),
            ("lr", self.lr is None or self.lr > 0, "> 0"),
            ("clip_epsilon", 0 < self.clip_epsilon < 1, "in (0, 1)"),
            ("inner_steps", isinstance(self.inner_steps, int) and self.inner_steps >= 0, "a non-negative integer"),
            ("nu_init", self.nu_init >= 0, ">= 0"),
            ("nu_max", self.nu_max >= self.nu_init, ">= nu_init"),
            ("lam", 0 <= self.lam <= 1, "in [0, 1]"),
            ("mode", self.mode in ("exact", "sampled"), "'exact' or 'sampled'"),
            ("surrogate", self.surrogate in ("kl_penalty", "clip"), "'kl_penalty' or 'clip'"),
            ("schedule", self.schedule in ("constant", "geometric"), "'constant' or 'geometric'"),
            ("decay", 0 < self.decay <= 1, "in (0, 1]"),
            ("episodes", isinstance(self.episodes, int) and self.episodes >= 1, "a positive integer"),
            ("init_scale", self.init_scale >= 0, ">= 0"),
            ("horizon", self.horizon is None or (isinstance(self.horizon, int) and self.horizon >= 1), "a positive integer"),
        ]
        for name, ok, want in checks:
            if not ok:
                raise ConfigurationError(f"{name} must be {want}, got {getattr(self, name)!r}")
        if self.surrogate == "clip" and self.mode != "sampled":
            raise ConfigurationError("surrogate 'clip' is only available in sampled mode")

    def coefficients(self, k: int) -> tuple[float, float]:
        """(alpha_k, beta_k) under the configured schedule."""
        if self.schedule == "geometric":
            f = self.decay**k
            return self.alpha * f, self.beta * f
        return self.alpha, self.beta

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CupConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigurationError(f"unknown config field(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class ExactData:
    """Closed-form quantities of the reference policy pi_k."""

    policy: SoftmaxPolicy
    d_lambda: np.ndarray
    adv: np.ndarray
    cost_adv: np.ndarray
    j_cost: float
    gamma_tilde: float


def exact_data(model: CmdpModel, policy: SoftmaxPolicy, lam: float) -> ExactData:
    return ExactData(
        policy=policy,
        d_lambda=lambda_visitation(model, policy, lam).dist,
        adv=exact_gae(model, policy, lam, "reward").values,
        cost_adv=exact_gae(model, policy, lam, "cost").values,
        j_cost=objective(model, policy, "cost"),
        gamma_tilde=gamma_tilde(model.gamma, lam),
    )


Data = Union[ExactData, EstimatorBatch]


# -- building blocks ---------------------------------------------------------


def _expected_adv(pi: SoftmaxPolicy, weights: np.ndarray, adv: np.ndarray):
    """sum_s w(s) sum_a pi(a|s) adv(s, a) and its gradient."""
    mean = np.einsum("sa,sa->s", pi.probs, adv)
    val = float(weights @ mean)
    grad = weights[:, None] * pi.probs * (adv - mean[:, None])
    return val, grad


def _sampled_ratio_term(pi: SoftmaxPolicy, est: EstimatorBatch, adv: np.ndarray):
    """sum_{i,t} w_it ratio_it adv_it and its gradient."""
    b = est.trajectories
    s, a = b.states[:, :-1], b.actions
    ratio = np.exp(pi.log_probs[s, a] - b.log_probs_behavior)
    contrib = est.weights * ratio * adv
    return float(contrib.sum()), _score_grad(pi, s, a, contrib)


def _score_grad(pi: SoftmaxPolicy, s, a, coef) -> np.ndarray:
    """sum over samples of coef * d log pi(a|s) / d theta."""
    S, A = pi.shape
    per_s = np.bincount(s.ravel(), weights=coef.ravel(), minlength=S)
    grad = np.zeros((S, A))
    np.add.at(grad, (s.ravel(), a.ravel()), coef.ravel())
    return grad - per_s[:, None] * pi.probs


def _weighted_kl(ref: SoftmaxPolicy, pi: SoftmaxPolicy, weights: np.ndarray):
    """sum_s w(s) KL(ref(.|s) || pi(.|s)) and its gradient in pi's logits."""
    kl = np.sum(ref.probs * (ref.log_probs - pi.log_probs), axis=1)
    grad = weights[:, None] * (pi.probs - ref.probs)
    return float(weights @ kl), grad


def _sqrt_kl(ref: SoftmaxPolicy, pi: SoftmaxPolicy, weights):
    k, gk = _weighted_kl(ref, pi, weights)
    k = max(k, 0.0)
    if k < KL_CUSP:
        return math.sqrt(k), np.zeros_like(gk)
    r = math.sqrt(k)
    return r, gk / (2.0 * r)


def _state_weights(data: Data, n_states: int) -> np.ndarray:
    if isinstance(data, ExactData):
        return data.d_lambda
    return data.state_weights(n_states)


# -- objectives --------------------------------------------------------------


def improvement_objective(theta, theta_k, data: Data, config: CupConfig, alpha: Optional[float] = None):
    """E_{d^lam_k, pi_k}[ratio A^GAE] - alpha sqrt(E_{d^lam_k}[KL(pi_k, pi_theta)]), maximized."""
    pi = SoftmaxPolicy(theta)
    alpha = config.alpha if alpha is None else alpha
    w = _state_weights(data, pi.shape[0])
    if isinstance(data, ExactData):
        val, grad = _expected_adv(pi, w, data.adv)
    else:
        val, grad = _sampled_ratio_term(pi, data, data.adv_hat)
    if alpha:
        r, gr = _sqrt_kl(SoftmaxPolicy(theta_k), pi, w)
        val -= alpha * r
        grad = grad - alpha * gr
    return val, grad


def clip_objective(theta, theta_k, est: EstimatorBatch, clip_epsilon: float):
    """Weighted mean of min(ratio A, clip(ratio, 1 - eps, 1 + eps) A), maximized."""
    if not isinstance(est, EstimatorBatch):
        raise ConfigurationError("the clipped surrogate needs sampled data")
    pi = SoftmaxPolicy(theta)
    b = est.trajectories
    s, a = b.states[:, :-1], b.actions
    ratio = np.exp(pi.log_probs[s, a] - b.log_probs_behavior)
    adv = est.adv_hat
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv
    active = unclipped <= clipped  # the ratio branch is the min; clamp branch has zero slope
    val = float((est.weights * np.minimum(unclipped, clipped)).sum())
    grad = _score_grad(pi, s, a, np.where(active, est.weights * unclipped, 0.0))
    return val, grad


def cost_surrogate(theta, theta_k, data: Data, b: float, beta: float = 0.0):
    """J^c_k + E_{d^lam_k, pi_k}[ratio A^GAE_C] / (1 - gt) + beta sqrt(E[KL(pi_k, pi_theta)]) - b."""
    pi = SoftmaxPolicy(theta)
    w = _state_weights(data, pi.shape[0])
    if isinstance(data, ExactData):
        gt, jc = data.gamma_tilde, data.j_cost
        val, grad = _expected_adv(pi, w, data.cost_adv)
    else:
        gt, jc = gamma_tilde(data.gamma, data.lam), data.j_cost_hat
        val, grad = _sampled_ratio_term(pi, data, data.cost_adv_hat)
    val, grad = jc + val / (1.0 - gt) - b, grad / (1.0 - gt)
    if beta:
        r, gr = _sqrt_kl(SoftmaxPolicy(theta_k), pi, w)
        val += beta * r
        grad = grad + beta * gr
    return val, grad


def projection_objective(theta, theta_half, theta_k, nu: float, data: Data, config: CupConfig, b: float,
                         beta: Optional[float] = None):
    """E_{d^lam_k}[KL(pi_half, pi_theta)] + nu * cost_surrogate, minimized."""
    if nu < 0:
        raise ConfigurationError(f"nu must be >= 0, got {nu}")
    pi = SoftmaxPolicy(theta)
    w = _state_weights(data, pi.shape[0])
    val, grad = _weighted_kl(SoftmaxPolicy(theta_half), pi, w)
    if nu:
        beta = config.beta if beta is None else beta
        c, gc = cost_surrogate(theta, theta_k, data, b, beta)
        val += nu * c
        grad = grad + nu * gc
    return val, grad


# -- steps -------------------------------------------------------------------


def _check_grad(grad, where: str, it: int) -> None:
    if not np.all(np.isfinite(grad)):
        bad = np.argwhere(~np.isfinite(grad))[0]
        raise NumericalError(f"non-finite gradient in {where} at inner step {it}, entry {tuple(int(i) for i in bad)}")


def improvement_step(theta_k, config: CupConfig, data: Data, alpha: Optional[float] = None) -> np.ndarray:
    """inner_steps of gradient ascent on the Step-1 surrogate, starting at theta_k."""
    theta = np.array(theta_k, dtype=float)
    for it in range(config.inner_steps):
        if config.surrogate == "clip":
            _, g = clip_objective(theta, theta_k, data, config.clip_epsilon)
        else:
            _, g = improvement_objective(theta, theta_k, data, config, alpha)
        _check_grad(g, "improvement_step", it)
        theta = theta + config.step_size * g
    return theta


def projection_step(theta_half, theta_k, nu: float, config: CupConfig, data: Data, b: float,
                    beta: Optional[float] = None) -> np.ndarray:
    """inner_steps of gradient descent on the projection objective, starting at theta_half."""
    theta = np.array(theta_half, dtype=float)
    for it in range(config.inner_steps):
        _, g = projection_objective(theta, theta_half, theta_k, nu, data, config, b, beta)
        _check_grad(g, "projection_step", it)
        theta = theta - config.step_size * g
    return theta


def dual_update(nu: float, j_cost_hat: float, b: float, eta: float, nu_max: float) -> float:
    """min(nu_max, (nu + eta (J^C - b))_+)."""
    return float(min(nu_max, max(0.0, nu + eta * (j_cost_hat - b))))


def theorem2_certificate(chi_k, alpha_k, beta_k, eps_v, eps_c, gamma, lam, n_states, b) -> tuple[float, float]:
    """(improvement floor, violation ceiling) for one CUP iterate."""
    gt = gamma_tilde(gamma, lam)
    iota = visitation_coefficient(gamma, lam, n_states)
    root = math.sqrt(2.0 * max(chi_k, 0.0))
    floor = -iota * alpha_k * root * eps_v / (1.0 - gt)
    ceiling = b + iota * beta_k * root * eps_c / (1.0 - gt)
    return floor, ceiling


# -- the loop ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CupState:
    theta: np.ndarray
    nu: float
    v_est: np.ndarray
    c_est: np.ndarray
    k: int = 0
    seed: int = 0

    @classmethod
    def initial(cls, model: CmdpModel, config: CupConfig, seed: int = 0, theta=None) -> "CupState":
        S, A = model.n_states, model.n_actions
        if theta is None:
            theta = config.init_scale * np.random.default_rng(seed).standard_normal((S, A))
        theta = np.array(theta, dtype=float)
        return cls(theta, config.nu_init, np.zeros(S), np.zeros(S), 0, seed)


@dataclass(frozen=True)
class Certificate:
    floor: float
    ceiling: float
    degradation: float  # J(pi_{k+1}) - J(pi_k)
    j_cost_next: float
    surrogate_feasible: bool  # pi_{k+1} satisfies the projection constraint

    @property
    def holds(self) -> bool:
        tol = 1e-9
        return self.degradation >= self.floor - tol and self.j_cost_next <= self.ceiling + tol


@dataclass(frozen=True)
class IterationReport:
    iter: int
    j_reward: float
    j_cost: float
    nu: float
    kl_step1: float
    surrogate_value: float
    feasible: bool
    certificate: Optional[Certificate] = None

    def csv_row(self) -> str:
        return (f"{self.iter},{self.j_reward:.10f},{self.j_cost:.10f},{self.nu:.10f},"
                f"{self.kl_step1:.10e},{self.surrogate_value:.10e},{int(self.feasible)}")


CSV_HEADER = "iter,j_reward_exact,j_cost_exact,nu,kl_step1,surrogate,feasible"


def _collect(model: CmdpModel, state: CupState, config: CupConfig) -> Data:
    pi = SoftmaxPolicy(state.theta)
    if config.mode == "exact":
        return exact_data(model, pi, config.lam)
    horizon = config.horizon or default_horizon(model.gamma)
    seed_k = int(np.random.SeedSequence([state.seed, state.k]).generate_state(1)[0])
    batch = sample_batch(model, pi, config.episodes, horizon, seed_k)
    return build_estimates(batch, state.v_est, state.c_est, model.gamma, config.lam)


def cup_iterate(model: CmdpModel, state: CupState, config: CupConfig, certify: bool = False,
                T_sup: int = 200) -> tuple[CupState, IterationReport]:
    check_policy(model, SoftmaxPolicy(state.theta))
    alpha_k, beta_k = config.coefficients(state.k)
    theta_k = state.theta
    data = _collect(model, state, config)
    pi_k = SoftmaxPolicy(theta_k)

    theta_half = improvement_step(theta_k, config, data, alpha_k)
    pi_half = SoftmaxPolicy(theta_half)
    if isinstance(data, ExactData):
        j_cost_hat = data.j_cost
        kl_step1 = float(data.d_lambda @ np.sum(pi_k.probs * (pi_k.log_probs - pi_half.log_probs), axis=1))
        surrogate = _expected_adv(pi_half, data.d_lambda, data.adv)[0]
    else:
        j_cost_hat = data.j_cost_hat
        kl_step1 = empirical_kl(data, pi_k, pi_half)
        surrogate = _sampled_ratio_term(pi_half, data, data.adv_hat)[0]

    nu = dual_update(state.nu, j_cost_hat, model.cost_limit, config.eta, config.nu_max)
    theta_next = projection_step(theta_half, theta_k, nu, config, data, model.cost_limit, beta_k)
    pi_next = SoftmaxPolicy(theta_next)

    v_est, c_est = state.v_est, state.c_est
    if isinstance(data, EstimatorBatch):
        v_est = fit_tabular_value(data, data.v_targets, v_est)
        c_est = fit_tabular_value(data, data.c_targets, c_est)

    j_r, j_c = objective(model, pi_next, "reward"), objective(model, pi_next, "cost")
    cert = None
    if certify:
        chi = float(lambda_visitation(model, pi_k, config.lam).dist
                    @ np.sum(pi_k.probs * (pi_k.log_probs - pi_half.log_probs), axis=1))
        exact = exact_data(model, pi_k, config.lam)
        v_k, c_k = state_values(model, pi_k), state_values(model, pi_k, "cost")
        floor, ceiling = theorem2_certificate(
            chi, alpha_k, beta_k,
            sup_abs_td(model, pi_next, v_k, "reward", T_sup),
            sup_abs_td(model, pi_next, c_k, "cost", T_sup),
            model.gamma, config.lam, model.n_states, model.cost_limit,
        )
        c_sur, _ = cost_surrogate(theta_next, theta_k, exact, model.cost_limit, beta_k)
        cert = Certificate(floor, ceiling, j_r - float(model.rho0 @ v_k), j_c, c_sur <= 1e-9)

    for name, value in (("j_reward", j_r), ("j_cost", j_c), ("kl_step1", kl_step1), ("surrogate", surrogate)):
        if not math.isfinite(value):
            raise NumericalError(f"{name} is {value} at iteration {state.k + 1}; the policy has degenerated "
                                 f"(max |theta| = {np.max(np.abs(theta_next)):.3g}), try a smaller lr")
    report = IterationReport(
        iter=state.k + 1, j_reward=j_r, j_cost=j_c, nu=nu, kl_step1=kl_step1,
        surrogate_value=surrogate, feasible=j_c <= model.cost_limit, certificate=cert,
    )
    return replace(state, theta=theta_next, nu=nu, v_est=v_est, c_est=c_est, k=state.k + 1), report


def initial_report(model: CmdpModel, state: CupState) -> IterationReport:
    pi = SoftmaxPolicy(state.theta)
    j_r, j_c = objective(model, pi, "reward"), objective(model, pi, "cost")
    return IterationReport(state.k, j_r, j_c, state.nu, 0.0, 0.0, j_c <= model.cost_limit)


def run_cup(model: CmdpModel, config: CupConfig, iters: int, seed: int = 0, certify: bool = False,
            theta0=None) -> tuple[CupState, list[IterationReport]]:
    """Run ``iters`` CUP iterations; the first report (iter 0) describes the initial policy."""
    state = CupState.initial(model, config, seed, theta0)
    reports = [initial_report(model, state)]
    for _ in range(iters):
        state, rep = cup_iterate(model, state, config, certify)
        reports.append(rep)
    return state, reports


def reports_to_csv(reports: list[IterationReport]) -> str:
    return "\n".join([CSV_HEADER] + [r.csv_row() for r in reports]) + "\n"


def config_to_json(config: CupConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)

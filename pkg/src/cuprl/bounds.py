"""Performance-difference bounds between two policies, evaluated exactly.

Every quantity is a closed-form matrix expression; nothing is sampled. The
``BoundReport`` returned by each bound carries the actual difference next to
the bound so callers can audit it (``report.certified()``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .cmdp import (
    CmdpModel,
    Signal,
    SoftmaxPolicy,
    StateDistribution,
    check_policy,
    objective,
    state_values,
    transition_matrix,
)
from .errors import DomainError
from .lambda_returns import (
    _state_vector,
    abs_td_table,
    exact_gae,
    expected_td,
    gamma_tilde,
    lambda_visitation,
    td_table,
)

Variant = Literal["theorem1_tv", "prop1_tv", "prop1_kl", "prop2_tv", "prop2_kl"]

AUDIT_ATOL = 1e-9


@dataclass(frozen=True)
class BoundReport:
    actual_diff: float
    lower: float
    upper: float
    truncation_T: int
    truncation_tail: float
    epsilon_sup: float
    mean_tv: float
    mean_kl: float
    variant: Variant
    lam: float = 0.0
    gamma_tilde: float = float("nan")
    # (1 - gamma_tilde) * (bound) = surrogate -/+ penalty_coef * E[TV]; prop bounds only.
    surrogate: float = float("nan")
    penalty_coef: float = float("nan")
    # Part of the exact difference that the importance-weighted Delta_t terms leave out
    # (state distribution shift for t >= 1); theorem1 only.
    state_shift_term: float = float("nan")

    def margin(self, atol: float = 0.0) -> float:
        """Signed slack of the certified sandwich; negative means a violation."""
        lo = self.actual_diff - (self.lower - self.truncation_tail)
        hi = (self.upper + self.truncation_tail) - self.actual_diff
        return min(lo, hi) + atol

    def certified(self, atol: float = AUDIT_ATOL) -> bool:
        return self.margin(atol) >= 0.0

    def to_dict(self) -> dict:
        return {k: _json_float(v) for k, v in asdict(self).items()}


def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


@dataclass(frozen=True, eq=False)
class DivergencePair:
    """Per-state TV and KL(pi_old || pi_new) with expectations under ``weights``."""

    tv_per_state: np.ndarray
    kl_per_state: np.ndarray
    weights: StateDistribution

    @property
    def expected_tv(self) -> float:
        return float(self.weights.dist @ self.tv_per_state)

    @property
    def expected_kl(self) -> float:
        return float(self.weights.dist @ self.kl_per_state)


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p(.|s) || q(.|s)) for every row s."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return np.maximum(terms.sum(axis=1), 0.0)


def divergences(pi_new: SoftmaxPolicy, pi_old: SoftmaxPolicy, weights: StateDistribution) -> DivergencePair:
    tv = 0.5 * np.abs(pi_new.probs - pi_old.probs).sum(axis=1)
    kl = kl_rows(pi_old.probs, pi_new.probs)
    return DivergencePair(tv_per_state=tv, kl_per_state=kl, weights=weights)


def default_truncation(gamma: float, lam: float) -> int:
    """ceil(log(1e-10) / log(gamma lam)), capped at 5000 and at least 1."""
    gl = gamma * lam
    if gl <= 0.0:
        return 1
    return int(min(5000, max(1, math.ceil(math.log(1e-10) / math.log(gl)))))


def expected_td_vector(
    model: CmdpModel, policy: SoftmaxPolicy, phi, t: int, signal: Signal = "reward"
) -> np.ndarray:
    """Expected TD error at step t from each start state: P_pi^t delta-bar."""
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    P = transition_matrix(model, policy)
    return np.linalg.matrix_power(P, t) @ expected_td(model, policy, phi, signal)


def _kappa(model, pi_new, pi_old, phi, signal):
    return np.einsum("sa,sa->s", pi_new.probs - pi_old.probs, td_table(model, phi, signal))


def delta_vector(
    model: CmdpModel,
    pi_new: SoftmaxPolicy,
    pi_old: SoftmaxPolicy,
    phi,
    t: int,
    signal: Signal = "reward",
) -> np.ndarray:
    """Importance-weighted TD difference at step t, rolled out under ``pi_old``.

    Delta_t = P_old^t kappa, kappa[s] = sum_a (pi_new - pi_old)(a|s) E_{s'}[delta(s, a, s')].
    """
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    check_policy(model, pi_new)
    check_policy(model, pi_old)
    P_old = transition_matrix(model, pi_old)
    return np.linalg.matrix_power(P_old, t) @ _kappa(model, pi_new, pi_old, phi, signal)


def _dual_exponent(p_norm) -> float:
    if p_norm == 1:
        return math.inf
    if p_norm == 2:
        return 2.0
    raise DomainError(f"p_norm must be 1 or 2, got {p_norm!r}")


def theorem1_bounds(
    model: CmdpModel,
    pi_new: SoftmaxPolicy,
    pi_old: SoftmaxPolicy,
    phi,
    lam: float,
    p_norm: int = 1,
    T_trunc: int | None = None,
    signal: Signal = "reward",
) -> BoundReport:
    """Two-sided bound on J(pi_new) - J(pi_old) for an arbitrary baseline ``phi``.

    L^{+/-} = 1/(1 - gt) sum_{t<=T} (gamma lam)^t (<d_old, Delta_t> +/- eps_t) with
    eps_t = ||d_new - d_old||_p ||P_new^t delta-bar_new||_q. The tail beyond T is
    bounded by (gamma lam)^{T+1} / ((1 - gamma lam)(1 - gt)) times a uniform bound
    on the summand.
    """
    q = _dual_exponent(p_norm)
    phi = _state_vector(model, phi, "phi")
    gl = model.gamma * lam
    gt = gamma_tilde(model.gamma, lam)
    T = default_truncation(model.gamma, lam) if T_trunc is None else int(T_trunc)
    if T < 1:
        raise DomainError(f"T_trunc must be >= 1, got {T}")
    S = model.n_states

    d_old = lambda_visitation(model, pi_old, lam)
    d_new = lambda_visitation(model, pi_new, lam)
    gap = float(np.linalg.norm(d_new.dist - d_old.dist, ord=p_norm))
    P_new = transition_matrix(model, pi_new)
    P_old = transition_matrix(model, pi_old)
    x = expected_td(model, pi_new, phi, signal)
    y = _kappa(model, pi_new, pi_old, phi, signal)
    x0_sup, y0_sup = np.abs(x).max(), np.abs(y).max()
    z = x.copy()  # rolled out under pi_old, for the shift diagnostic

    centre = slack = shift = 0.0
    eps_sup = 0.0
    w = 1.0
    for t in range(T + 1):
        eps_norm = float(np.linalg.norm(x, ord=q))
        eps_sup = max(eps_sup, eps_norm)
        centre += w * float(d_old.dist @ y)
        slack += w * gap * eps_norm
        shift += w * float(d_old.dist @ (x - z))
        w *= gl
        if w == 0.0:
            break
        x, y, z = P_new @ x, P_old @ y, P_old @ z

    # |<d_old, Delta_t>| <= ||kappa||_inf and ||P^t x||_q <= S^{1/q} ||x||_inf for all t.
    summand_bound = y0_sup + gap * x0_sup * (1.0 if q == math.inf else math.sqrt(S))
    tail = 0.0 if gl == 0.0 else gl ** (T + 1) / ((1.0 - gl) * (1.0 - gt)) * summand_bound

    div = divergences(pi_new, pi_old, d_old)
    actual = objective(model, pi_new, signal) - objective(model, pi_old, signal)
    return BoundReport(
        actual_diff=actual,
        lower=(centre - slack) / (1.0 - gt),
        upper=(centre + slack) / (1.0 - gt),
        truncation_T=T,
        truncation_tail=float(tail),
        epsilon_sup=eps_sup,
        mean_tv=div.expected_tv,
        mean_kl=div.expected_kl,
        variant="theorem1_tv",
        lam=float(lam),
        gamma_tilde=gt,
        state_shift_term=shift / (1.0 - gt),
    )


def visitation_coefficient(gamma: float, lam: float, n_states: int) -> float:
    """iota = gt (gamma lam (|S| - 1) + 1) / ((1 - gt)(1 - gamma lam))."""
    gt = gamma_tilde(gamma, lam)
    gl = gamma * lam
    return gt * (gl * (n_states - 1) + 1.0) / ((1.0 - gt) * (1.0 - gl))


def sup_abs_td(
    model: CmdpModel, policy: SoftmaxPolicy, phi, signal: Signal = "reward", T_sup: int = 200
) -> float:
    """sup_{0<=t<=T_sup} max_s E[|delta_t|] with s_t ~ P_pi^t(.|s), a ~ pi, s' ~ P."""
    e = np.einsum("sa,sa->s", policy.probs, abs_td_table(model, phi, signal))
    P = transition_matrix(model, policy)
    best = float(e.max())
    for _ in range(int(T_sup)):
        e = P @ e
        best = max(best, float(e.max()))
    return best


def _prop_bound(model, pi_new, pi_old, lam, T_sup, signal, sign, variant):
    gt = gamma_tilde(model.gamma, lam)
    phi = state_values(model, pi_old, signal)
    eps = sup_abs_td(model, pi_new, phi, signal, T_sup)
    d_old = lambda_visitation(model, pi_old, lam)
    gae = exact_gae(model, pi_old, lam, signal, "true_value").values
    surrogate = float(d_old.dist @ np.einsum("sa,sa->s", pi_new.probs, gae))
    coef = 2.0 * eps * visitation_coefficient(model.gamma, lam, model.n_states)
    div = divergences(pi_new, pi_old, d_old)
    bound = (surrogate + sign * coef * div.expected_tv) / (1.0 - gt)
    actual = objective(model, pi_new, signal) - objective(model, pi_old, signal)
    return BoundReport(
        actual_diff=actual,
        lower=bound if sign < 0 else -math.inf,
        upper=bound if sign > 0 else math.inf,
        truncation_T=int(T_sup),
        truncation_tail=0.0,
        epsilon_sup=eps,
        mean_tv=div.expected_tv,
        mean_kl=div.expected_kl,
        variant=variant,
        lam=float(lam),
        gamma_tilde=gt,
        surrogate=surrogate,
        penalty_coef=coef,
    )


def prop1_lower(
    model: CmdpModel, pi_new: SoftmaxPolicy, pi_old: SoftmaxPolicy, lam: float, T_sup: int = 200
) -> BoundReport:
    """GAE lower bound on the reward improvement J(pi_new) - J(pi_old)."""
    return _prop_bound(model, pi_new, pi_old, lam, T_sup, "reward", -1.0, "prop1_tv")


def prop2_upper(
    model: CmdpModel, pi_new: SoftmaxPolicy, pi_old: SoftmaxPolicy, lam: float, T_sup: int = 200
) -> BoundReport:
    """GAE upper bound on the cost increase J^c(pi_new) - J^c(pi_old)."""
    return _prop_bound(model, pi_new, pi_old, lam, T_sup, "cost", +1.0, "prop2_tv")


def prop3_substitute(report: BoundReport, divs: DivergencePair) -> BoundReport:
    """Swap E[TV] for sqrt(E[KL] / 2) in a TV-variant proposition bound."""
    if report.variant not in ("prop1_tv", "prop2_tv"):
        raise DomainError(f"can only substitute into prop1_tv/prop2_tv, got {report.variant}")
    gt = report.gamma_tilde
    kl_term = math.sqrt(max(divs.expected_kl, 0.0) / 2.0)
    if report.variant == "prop1_tv":
        lower = (report.surrogate - report.penalty_coef * kl_term) / (1.0 - gt)
        fields = dict(lower=lower, variant="prop1_kl")
    else:
        upper = (report.surrogate + report.penalty_coef * kl_term) / (1.0 - gt)
        fields = dict(upper=upper, variant="prop2_kl")
    return _replace(report, mean_kl=divs.expected_kl, **fields)


def _replace(report: BoundReport, **changes) -> BoundReport:
    data = asdict(report)
    data.update(changes)
    return BoundReport(**data)


def visitation_gap(
    model: CmdpModel, pi_new: SoftmaxPolicy, pi_old: SoftmaxPolicy, lam: float
) -> tuple[float, float]:
    """(||d^lam_new - d^lam_old||_1, lemma bound with E[2 TV] taken under d^lam_old)."""
    gt = gamma_tilde(model.gamma, lam)
    gl = model.gamma * lam
    d_old = lambda_visitation(model, pi_old, lam)
    d_new = lambda_visitation(model, pi_new, lam)
    lhs = float(np.abs(d_new.dist - d_old.dist).sum())
    div = divergences(pi_new, pi_old, d_old)
    coef = gt * (gl * (model.n_states - 1) + 1.0) / ((1.0 - gt) * (1.0 - gl))
    return lhs, float(coef * 2.0 * div.expected_tv)

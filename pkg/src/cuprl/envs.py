"""Model generators and a brute-force reference for deterministic policies."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional

import numpy as np

from .cmdp import CmdpModel
from .errors import ConfigurationError, UsageError

MOVES = {
    "compass": ((-1, 0), (0, 1), (1, 0), (0, -1)),  # up, right, down, left
    "right_down": ((0, 1), (1, 0)),
}


@dataclass(frozen=True)
class GridworldSpec:
    """Rectangular gridworld with one absorbing goal and cost-carrying hazard cells.

    Cells are numbered row-major, ``cell = row * width + col``. Entering the goal
    pays ``goal_reward``; every move out of a non-goal cell pays ``step_reward``.
    Acting in a hazard cell costs ``hazard_cost``. With probability ``slip_prob`` the
    agent moves in one of the two directions perpendicular to the intended one.
    """

    width: int
    height: int
    goal_cell: int
    hazard_cells: tuple[int, ...] = ()
    step_reward: float = 0.0
    goal_reward: float = 1.0
    hazard_cost: float = 1.0
    slip_prob: float = 0.0
    gamma: float = 0.9
    cost_limit_b: float = 0.0
    start_cell: int = 0
    moves: Literal["compass", "right_down"] = "compass"

    def __post_init__(self):
        object.__setattr__(self, "hazard_cells", tuple(int(h) for h in self.hazard_cells))
        self.validate()

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def validate(self) -> None:
        for name in ("width", "height"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        n = self.n_cells
        for name in ("goal_cell", "start_cell"):
            v = getattr(self, name)
            if not 0 <= v < n:
                raise ConfigurationError(f"{name}={v} is outside the {self.height}x{self.width} grid")
        for i, h in enumerate(self.hazard_cells):
            if not 0 <= h < n:
                raise ConfigurationError(f"hazard_cells[{i}]={h} is outside the grid")
        if self.goal_cell in self.hazard_cells:
            raise ConfigurationError(f"goal_cell={self.goal_cell} is also listed in hazard_cells")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ConfigurationError(f"slip_prob must lie in [0, 1), got {self.slip_prob}")
        if self.hazard_cost < 0:
            raise ConfigurationError(f"hazard_cost must be >= 0, got {self.hazard_cost}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if self.cost_limit_b < 0:
            raise ConfigurationError(f"cost_limit_b must be >= 0, got {self.cost_limit_b}")
        if self.moves not in MOVES:
            raise ConfigurationError(f"moves must be one of {sorted(MOVES)}, got {self.moves!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hazard_cells"] = list(self.hazard_cells)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GridworldSpec":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown gridworld field(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(f"gridworld spec: {exc}") from exc


def build_gridworld(spec: GridworldSpec) -> CmdpModel:
    H, W = spec.height, spec.width
    moves = MOVES[spec.moves]
    S, A = spec.n_cells, len(moves)

    def step(cell, d):
        r, c = divmod(cell, W)
        r2, c2 = r + d[0], c + d[1]
        if 0 <= r2 < H and 0 <= c2 < W:
            return r2 * W + c2
        return cell

    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    C = np.zeros((S, A))
    for s in range(S):
        if s == spec.goal_cell:
            P[s, :, s] = 1.0
            continue
        for a, d in enumerate(moves):
            lateral = ((d[1], d[0]), (-d[1], -d[0]))
            P[s, a, step(s, d)] += 1.0 - spec.slip_prob
            for ld in lateral:
                P[s, a, step(s, ld)] += spec.slip_prob / 2.0
            R[s, a, :] = spec.step_reward
            R[s, a, spec.goal_cell] += spec.goal_reward
        if s in spec.hazard_cells:
            C[s, :] = spec.hazard_cost
    rho0 = np.zeros(S)
    rho0[spec.start_cell] = 1.0
    return CmdpModel(P, R, C, rho0, spec.gamma, spec.cost_limit_b)


def random_cmdp(
    seed: int, n_states: int, n_actions: int, gamma: float = 0.9, b: float = 0.0
) -> CmdpModel:
    """Dirichlet(1) transitions and rho0, rewards U[-1, 1], costs U[0, 1]."""
    if n_states < 1 or n_actions < 1:
        raise ConfigurationError("n_states and n_actions must be >= 1")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions, n_states))
    C = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    rho0 = rng.dirichlet(np.ones(n_states))
    rho0 /= rho0.sum()
    return CmdpModel(P, R, C, rho0, gamma, b)


def value_iteration(model: CmdpModel, tol: float = 1e-12, max_iter: int = 100_000):
    """Optimal reward values and a greedy deterministic policy (unconstrained)."""
    r_sa = model.expected_signal("reward")
    v = np.zeros(model.n_states)
    for _ in range(max_iter):
        q = r_sa + model.gamma * model.transition @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    q = r_sa + model.gamma * model.transition @ v
    return v, q.argmax(axis=1)


@dataclass(frozen=True)
class OracleResult:
    best_return: Optional[float]
    best_cost: Optional[float]
    policy_table: Optional[np.ndarray]
    n_policies: int
    n_feasible: int
    returns: np.ndarray = field(repr=False, default=None)
    costs: np.ndarray = field(repr=False, default=None)


def deterministic_policy_values(model: CmdpModel, tables: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact (J, J^c) for a batch of deterministic policies given as [N, S] action tables."""
    S = model.n_states
    idx = np.arange(S)
    P = model.transition[idx, tables]  # [N, S, S]
    r = model.expected_signal("reward")[idx, tables]
    c = model.cost[idx, tables]
    lhs = np.eye(S)[None] - model.gamma * P
    rhs = np.stack([r, c], axis=-1)
    vals = np.linalg.solve(lhs, rhs)
    J = np.einsum("s,nsk->nk", model.rho0, vals)
    return J[:, 0], J[:, 1]


def deterministic_feasible_oracle(
    model: CmdpModel, max_policies: int = 10**6, chunk: int = 8192
) -> OracleResult:
    """Enumerate every deterministic policy; best return among those with J^c <= b.

    Constrained optima can be stochastic, so this is a lower reference for the
    CMDP optimum, not the optimum itself.
    """
    S, A = model.n_states, model.n_actions
    total = A**S
    if total > max_policies:
        raise UsageError(
            f"{A}^{S} = {total} deterministic policies exceeds the enumeration cap {max_policies}"
        )
    returns = np.empty(total)
    costs = np.empty(total)
    it = itertools.product(range(A), repeat=S)
    start = 0
    while start < total:
        block = np.array(list(itertools.islice(it, chunk)), dtype=int).reshape(-1, S)
        j, jc = deterministic_policy_values(model, block)
        returns[start:start + len(block)] = j
        costs[start:start + len(block)] = jc
        start += len(block)
    feasible = costs <= model.cost_limit + 1e-12
    if not feasible.any():
        return OracleResult(None, None, None, total, 0, returns, costs)
    best = int(np.flatnonzero(feasible)[np.argmax(returns[feasible])])
    table = np.array(np.unravel_index(best, (A,) * S))
    return OracleResult(
        float(returns[best]), float(costs[best]), table.astype(int), total, int(feasible.sum()), returns, costs
    )

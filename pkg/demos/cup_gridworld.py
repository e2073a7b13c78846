"""
CUP on a hazardous gridworld
============================

Runs Constrained Update Projection in exact mode on the committed 4x4 fixture.
The start policy walks through hazard cells too often; the dual variable rises
until the projection step pulls the cost back under the limit, and the return
settles near the best deterministic feasible policy.
"""

from pathlib import Path

import numpy as np

from cuprl.envs import deterministic_feasible_oracle, value_iteration, deterministic_policy_values
from cuprl.experiment import load_experiment
from cuprl.optimizer import run_cup

fixture = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "gridworld_4x4.json"
exp = load_experiment(fixture)
model, b = exp.model, exp.model.cost_limit

# %% Reference points
_, greedy = value_iteration(model)
j_opt, jc_opt = (x[0] for x in deterministic_policy_values(model, greedy[None]))
oracle = deterministic_feasible_oracle(model)
print(f"unconstrained optimum      J={j_opt:.4f}  J^c={jc_opt:.4f}")
print(f"cost limit b = 0.6 x {jc_opt:.4f} = {b:.4f}")
print(f"best deterministic feasible J={oracle.best_return:.4f}  J^c={oracle.best_cost:.4f}"
      f"  ({oracle.n_feasible} of {oracle.n_policies} policies feasible)")

# %% One run, printed every 25 iterations
state, reports = run_cup(model, exp.config, exp.iters, seed=exp.seed)
print("\n iter   J        J^c      nu      feasible")
for r in reports[::25]:
    print(f"{r.iter:5d}  {r.j_reward:.4f}  {r.j_cost:.4f}  {r.nu:.4f}  {r.feasible}")

# %% Where the final policy goes: most likely action per cell ('>' right, 'v' down)
probs = np.exp(state.theta - state.theta.max(axis=1, keepdims=True))
probs /= probs.sum(axis=1, keepdims=True)
hazards = set(exp.model.cost.sum(axis=1).nonzero()[0])
rows = []
for row in range(4):
    cells = []
    for col in range(4):
        s = 4 * row + col
        mark = "G" if s == 15 else ">v"[int(probs[s].argmax())]
        cells.append(f"{mark}{'*' if s in hazards else ' '}{probs[s].max():.2f}")
    rows.append("  ".join(cells))
print("\nfinal policy (* marks a hazard cell, number is the action probability):")
print("\n".join(rows))

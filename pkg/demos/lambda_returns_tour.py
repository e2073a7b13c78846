"""
A tour of the lambda-return quantities
======================================

Builds a small random CMDP and looks at the effective discount, the lambda
transition operator and the lambda visitation distribution, then checks the
two objective identities numerically.
"""

import numpy as np

from cuprl.cmdp import SoftmaxPolicy, discounted_visitation, objective, transition_matrix
from cuprl.envs import random_cmdp
from cuprl.lambda_returns import (
    gamma_tilde,
    lambda_dynamics,
    lambda_objective_identity,
    td_decomposition_identity,
)

np.set_printoptions(precision=4, suppress=True)

model = random_cmdp(seed=0, n_states=4, n_actions=2, gamma=0.9)
policy = SoftmaxPolicy(np.random.default_rng(0).standard_normal((4, 2)))

# The effective discount shrinks from gamma (lam = 0) to 0 (lam = 1).
for lam in (0.0, 0.5, 0.9, 0.95, 1.0):
    print(f"lam={lam:4.2f}  gamma_tilde={gamma_tilde(model.gamma, lam):.4f}")

# At lam = 0 the lambda operator is just the policy's transition matrix.
dyn0 = lambda_dynamics(model, policy, 0.0)
print("\nmax |P^0 - P_pi| =", np.abs(dyn0.p_lambda - transition_matrix(model, policy)).max())
print("max |d^0 - d^rho0| =", np.abs(dyn0.d_lambda.dist - discounted_visitation(model, policy).dist).max())

# At lam = 0.95 the operator looks further ahead and d^lam sits closer to rho0.
dyn = lambda_dynamics(model, policy, 0.95)
print("\nP^0.95 =\n", dyn.p_lambda)
print("rho0    =", model.rho0)
print("d^0.95  =", dyn.d_lambda.dist)
print("d^rho0  =", discounted_visitation(model, policy).dist)

# Both ways of writing the objective agree, for any lam and any baseline phi.
print(f"\nJ(pi) = {objective(model, policy):.10f}")
rng = np.random.default_rng(1)
for lam in (0.0, 0.5, 0.95):
    j, jl = lambda_objective_identity(model, policy, lam)
    jp, jd = td_decomposition_identity(model, policy, lam, rng.standard_normal(4))
    print(f"lam={lam:4.2f}  lambda form {jl:.10f}  TD form {jd:.10f}  gaps {abs(j - jl):.1e} {abs(jp - jd):.1e}")

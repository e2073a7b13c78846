from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from cuprl.cmdp import SoftmaxPolicy
from cuprl.envs import random_cmdp

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@st.composite
def instances(draw, max_states=6, max_actions=3, scale=2.0):
    """(model, policy, rng) with a seeded random model and random logits."""
    S = draw(st.integers(1, max_states))
    A = draw(st.integers(1, max_actions))
    seed = draw(st.integers(0, 2**31 - 1))
    gamma = draw(st.sampled_from([0.5, 0.9, 0.99]))
    rng = np.random.default_rng(seed)
    model = random_cmdp(seed, S, A, gamma=gamma)
    policy = SoftmaxPolicy(scale * rng.standard_normal((S, A)))
    return model, policy, rng


lambdas = st.sampled_from([0.0, 0.3, 0.5, 0.9, 0.95, 1.0])

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pomdp_ope.core import STATE, TabularPOMDP, TabularPolicy  # noqa: E402


def random_pomdp(seed, num_states=3, num_obs=3, num_actions=2, gamma=0.9):
    """Dense random POMDP with strictly positive behavior and target tables."""
    rng = np.random.default_rng(seed)
    model = TabularPOMDP(
        init_dist=rng.dirichlet(np.ones(num_states)),
        transition=rng.dirichlet(np.ones(num_states), size=(num_states, num_actions)),
        reward=rng.random((num_states, num_actions)),
        obs_kernel=rng.dirichlet(np.ones(num_obs), size=num_states),
        discount=gamma,
        r_max=1.0,
    )
    behavior = TabularPolicy(0.8 * rng.dirichlet(np.ones(num_actions), size=num_states) + 0.2 / num_actions, STATE)
    target = TabularPolicy(rng.dirichlet(np.ones(num_actions), size=num_obs))
    return model, behavior, target


@pytest.fixture
def toy25():
    from pomdp_ope.environments import make_binary_confounded_pomdp

    return make_binary_confounded_pomdp(0.25)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

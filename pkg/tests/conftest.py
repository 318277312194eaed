import numpy as np
import pytest

from robustq import build_tabular_mdp, solve_optimal_q, uniform_policy
from robustq.environments import RandomEnvSpec, build_random_env


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance criterion lines in the run summary."""
    try:
        import test_acceptance
    except ImportError:
        return
    if getattr(test_acceptance, "REPORT", None):
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.REPORT:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ref_mdp():
    """Seeded ergodic 5-state 2-action MDP shared across test modules."""
    return build_random_env(
        RandomEnvSpec(num_states=5, num_actions=2, dirichlet_alpha=1.0, discount=0.8, seed=11)
    )


@pytest.fixture(scope="session")
def ref_qstar(ref_mdp):
    return solve_optimal_q(ref_mdp, tol=1e-12)


@pytest.fixture(scope="session")
def ref_behavior(ref_mdp):
    return uniform_policy(ref_mdp.num_states, ref_mdp.num_actions)


def random_mdp(seed, num_states=4, num_actions=2, discount=0.85, alpha=1.0):
    """Dense-row random MDP for property tests."""
    rng = np.random.default_rng(seed)
    kernel = rng.dirichlet(np.full(num_states, alpha), size=num_states * num_actions)
    reward = rng.random(num_states * num_actions)
    initial = rng.dirichlet(np.ones(num_states))
    return build_tabular_mdp(kernel, reward, discount, initial, num_actions=num_actions)

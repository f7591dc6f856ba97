import numpy as np
import pytest

from regq.envs import GridWorld
from regq.linfa import build_gridpoly_features, exact_sigma, onehot_features, table_features
from regq.mdp import random_mdp


def random_table(mdp, d, seed):
    rng = np.random.default_rng(seed)
    return table_features(rng.normal(size=(mdp.num_states, mdp.num_actions, d)))


@pytest.fixture(scope="session")
def small_mdp():
    return random_mdp(6, 3, 0.9, seed=11)


@pytest.fixture(scope="session")
def small_features(small_mdp):
    return random_table(small_mdp, 8, seed=12)


@pytest.fixture(scope="session")
def small_ctx(small_features, small_mdp):
    return exact_sigma(small_features, small_mdp)


@pytest.fixture(scope="session")
def grid():
    return GridWorld()


@pytest.fixture(scope="session")
def grid_mdp(grid):
    return grid.to_mdp()


@pytest.fixture(scope="session")
def grid_poly(grid):
    return build_gridpoly_features(grid.width, grid.height, grid.num_actions)


@pytest.fixture(scope="session")
def grid_poly_ctx(grid_poly, grid_mdp):
    return exact_sigma(grid_poly, grid_mdp)


@pytest.fixture(scope="session")
def grid_onehot(grid_mdp):
    return onehot_features(grid_mdp.num_states, grid_mdp.num_actions)


@pytest.fixture(scope="session")
def grid_onehot_ctx(grid_onehot, grid_mdp):
    return exact_sigma(grid_onehot, grid_mdp)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance-criterion lines collected by ``test_acceptance``."""
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)

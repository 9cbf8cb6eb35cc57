import numpy as np
import pytest

from maxentstate.gridworlds import frozen_lake
from maxentstate.mdp import TabularMDP, TabularSoftmaxPolicy


def self_loop(reward=1.0, gamma=0.9):
    return TabularMDP(np.ones((1, 1, 1)), np.full((1, 1), reward), np.ones(1), gamma)


def two_cycle(gamma=0.5, alpha=(1.0, 0.0)):
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 0] = 1.0
    return TabularMDP(P, np.zeros((2, 1)), np.array(alpha), gamma)


@pytest.fixture
def lake():
    _, mdp = frozen_lake(4, slip=True, discount=0.99)
    return mdp


@pytest.fixture
def uniform4():
    return TabularSoftmaxPolicy.uniform(16, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dbce.environments import build_game
from dbce.game import MarkovGame

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance tests append (criterion, passed, detail) here; printed at session end
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def fair_gamble():
    return build_game("fairgamble")


@pytest.fixture(scope="session")
def hunters():
    return build_game("hunters")


@pytest.fixture(scope="session")
def cae():
    return build_game("cae")


def one_state_game(payoffs, gamma=0.99) -> MarkovGame:
    """Single-state repeated game with payoffs[i][a1][a2]."""
    r = np.asarray(payoffs, dtype=float)
    counts = r.shape[1:]
    J = int(np.prod(counts))
    return MarkovGame(["s"], counts, np.ones((1, J, 1)), r.reshape(len(counts), 1, J), [1.0], gamma)


def two_state_swap(gamma=0.9) -> MarkovGame:
    """One agent, two actions: action 0 stays, action 1 switches state; reward 1 in state 0."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    P[0, 1, 1] = P[1, 1, 0] = 1.0
    R = np.zeros((1, 2, 2))
    R[0, 0, :] = 1.0
    return MarkovGame(["a", "b"], (2,), P, R, [1.0, 0.0], gamma)

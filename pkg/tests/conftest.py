import pytest

from cbg.engine import Eligibility, Regime
from cbg.exact import enumerate_game
from cbg.simulate import simulate

DESK_EPISODES = 100_000
DESK_SEED = 20230501

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def no_repeat_desk():
    """n=3, no-repeat, all agents eligible, p_accept=0.5, 10^5 episodes."""
    return simulate(3, Regime.NO_REPEAT, Eligibility.ALL_AGENTS, DESK_EPISODES, DESK_SEED, 0.5)


@pytest.fixture(scope="session")
def exact_no_repeat():
    return enumerate_game(3, Regime.NO_REPEAT, 0.5)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

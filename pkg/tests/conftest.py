import numpy as np
import pytest

from nash_arena.game import rps_matrix, sample_preference_matrix

NEAR_VERTEX = (0.97, 0.015, 0.015)


@pytest.fixture
def rps():
    return rps_matrix()


@pytest.fixture(scope="session")
def sampled_games():
    """The 20 games of the trajectory suites: n=10, m in 1..4, seeds 0..4."""
    return [sample_preference_matrix(10, m, s) for m in (1, 2, 3, 4) for s in range(5)]


def random_policy(rng, n, floor=0.0):
    x = rng.dirichlet(np.ones(n))
    if floor:
        x = (x + floor) / (1 + n * floor)
    return x


ACCEPTANCE_LINES = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])

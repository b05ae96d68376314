import numpy as np
import pytest

from formation_rl.dynamics import QuadrotorParams


@pytest.fixture
def quad():
    return QuadrotorParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit_quaternions(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)



def pytest_terminal_summary(terminalreporter):
    from tests.acceptance_log import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

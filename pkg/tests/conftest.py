import numpy as np
import pytest

from fracfb.dynamics import example_problem
from fracfb.envelope import CandidateFamily

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def ex():
    return example_problem(0.5, 1.0, "one")


@pytest.fixture(scope="session")
def fam(ex):
    return CandidateFamily.constants(ex.ctrl)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

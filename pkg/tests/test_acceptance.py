"""Acceptance suite: one test per criterion, one PASS/FAIL line each."""
import pytest

from fracfb.acceptance import CRITERIA

from conftest import ACCEPTANCE_LINES


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    res = CRITERIA[number]()
    line = res.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert res.passed, line

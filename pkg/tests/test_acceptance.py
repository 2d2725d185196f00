"""Every acceptance criterion at its stated tolerance and time limit.

Each test prints the criterion's PASS/FAIL line; the lines are repeated
in the terminal summary (see conftest.py).
"""

import pytest

from hjchar.acceptance import CRITERIA, run_criterion

ACCEPTANCE_LINES = []


@pytest.mark.parametrize("number", sorted(CRITERIA), ids=lambda k: f"criterion_{k:02d}")
def test_criterion(number):
    result = run_criterion(number)
    line = result.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert result.passed, line

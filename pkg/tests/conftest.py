import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# verdict lines collected by test_acceptance.py, echoed after the run
_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def checklist():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checklist")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

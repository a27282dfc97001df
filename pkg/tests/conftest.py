import sys
from pathlib import Path

import pytest

# make tests/oracles.py and tests/builders.py importable as plain modules
sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one line per acceptance criterion; printed in the terminal summary."""

    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)

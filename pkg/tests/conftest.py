"""Shared pytest plumbing.

The acceptance tests register one verdict line per criterion; the terminal
summary hook replays them after the run so the per-criterion outcome is
visible even when per-test output is captured.
"""

import pytest

_acceptance_lines = []


def record_acceptance(line: str) -> None:
    _acceptance_lines.append(line)
    print(line)


@pytest.fixture
def acceptance_report():
    return record_acceptance


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)

from __future__ import annotations

import pytest

CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[CRITERIA] = []


@pytest.fixture(scope="session")
def criterion_log(request):
    """Collects ``(label, passed, detail)`` lines for the terminal summary."""
    return request.config.stash[CRITERIA]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(lines, key=lambda x: x[0]):
        state = "PASS" if passed is True else "FAIL" if passed is False else "INFO"
        terminalreporter.write_line(f"{state}  {label}: {detail}")

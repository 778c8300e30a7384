from __future__ import annotations

import pytest

_RESULTS: list = []


class Recorder:
    """Collects one pass/fail line per acceptance check for the terminal summary."""

    def __call__(self, criterion: str, passed: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        _RESULTS.append(line)
        print(line)
        return passed


@pytest.fixture(scope="session")
def record():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)

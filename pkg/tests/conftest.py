"""Collects the acceptance verdicts and prints them after the run."""

from pathlib import Path

import pytest

_REPORT: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str) -> bool:
        _REPORT[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    lines = [_REPORT[k] for k in sorted(_REPORT)]
    for line in lines:
        terminalreporter.write_line(line)
    Path(__file__).resolve().parent.parent.joinpath("acceptance_report.txt").write_text("\n".join(lines) + "\n")

"""Shared test plumbing: the acceptance ledger printed after the run."""

import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict and fail the test when it is false."""

    def _record(num: int, label: str, ok, detail: str = ""):
        ACCEPTANCE[num] = (label, bool(ok), detail)
        assert ok, f"acceptance check {num} ({label}): {detail}"

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        label, ok, detail = ACCEPTANCE[num]
        line = f"{num:2d}. {'PASS' if ok else 'FAIL'}  {label}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)

import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CRITERIA_LINES = []


def record_criterion(number, title: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    CRITERIA_LINES.append(f"criterion {number:>2} {status}  {title}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

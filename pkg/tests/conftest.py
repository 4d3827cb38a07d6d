import os
import re

import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: list[str] = []


@pytest.fixture
def record_criterion():
    def record(line: str):
        print(line)
        _ACCEPTANCE.append(line)
    return record


def _order(line: str):
    m = re.match(r"criterion (\d+)(\S*)", line)
    return (int(m.group(1)), m.group(2)) if m else (10**6, line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=_order):
            terminalreporter.write_line(line)

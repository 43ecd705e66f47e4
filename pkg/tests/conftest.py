import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from lanekeeper.lanecore import load_model_config  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def tusimple():
    return load_model_config("tusimple")


@pytest.fixture(scope="session")
def culane():
    return load_model_config("culane")


@pytest.fixture
def acceptance_line(request):
    """Record one PASS/FAIL line per acceptance criterion for the summary."""

    def record(name, ok, detail=""):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        ACCEPTANCE_LINES.append(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
        print(ACCEPTANCE_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

#: one ``(criterion, passed, detail)`` entry per acceptance check, in run order
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  ({detail})")


@pytest.fixture
def verdict():
    """Record an acceptance outcome, print it, and fail the test if it did not pass."""
    def record(name, passed, detail=""):
        ACCEPTANCE_RESULTS.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {name}  ({detail})")
        assert passed, f"{name}: {detail}"
    return record

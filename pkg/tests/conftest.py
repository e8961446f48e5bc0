import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    return request.param


@pytest.fixture
def record():
    def _record(name, passed, detail=""):
        ACCEPTANCE.append((name, bool(passed), detail))
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")

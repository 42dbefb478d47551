import time

import numpy as np
import pytest

from nonlocal_ac.core_grid import build_domain, half_space
from nonlocal_ac.profile_limits import solve_profile

CRITERIA = {}
PROFILE_SECONDS = {}


def _timed_profile(s):
    t0 = time.perf_counter()
    pr = solve_profile(s, 40.0, 0.02)
    PROFILE_SECONDS[s] = time.perf_counter() - t0
    return pr


@pytest.fixture(scope="session")
def profile_075():
    return _timed_profile(0.75)


@pytest.fixture(scope="session")
def profile_050():
    return _timed_profile(0.5)


@pytest.fixture
def criterion():
    """record(k, ok, detail): store one acceptance line, then assert ok."""

    def record(k, ok, detail):
        CRITERIA[k] = (bool(ok), detail)
        print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {k} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def line16():
    return build_domain(1, [-1.0], [1.0], 0.125, 1.0)


@pytest.fixture
def sign1d():
    return half_space([1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

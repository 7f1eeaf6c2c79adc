import numpy as np
import pytest

from scheduled_psf.psf import double_integrator_problem, pendulum_problem
from scheduled_psf.scheduler import ScheduleParams



@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pend():
    return pendulum_problem(schedule=ScheduleParams(smooth=True))


@pytest.fixture(scope="session")
def di2():
    return double_integrator_problem(horizon=2)


@pytest.fixture(scope="session")
def di3():
    return double_integrator_problem(horizon=3)


# one PASS/FAIL line per acceptance criterion in the terminal summary

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    num, title = mark.args
    prev = _CRITERIA.get(num, (title, True))
    _CRITERIA[num] = (title, prev[1] and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, ok = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {title}")

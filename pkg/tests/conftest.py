import threading

import numpy as np
import pytest
from hypothesis import settings

from profilenet import lpa

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

LL_DECREASE_TOL = 1e-8
ROW_SUM_TOL = 1e-8


class EMAudit:
    """Collects every E-step of every EM run executed by the suite."""

    def __init__(self):
        self.lock = threading.Lock()
        self.iterations = 0
        self.runs = set()
        self.worst_decrease = 0.0
        self.worst_row_error = 0.0
        self.violations = []

    def __call__(self, history, resets, tau):
        row_err = float(np.max(np.abs(tau.sum(axis=1) - 1.0)))
        decrease = 0.0
        if len(history) > 1 and not (resets and resets[-1] == len(history) - 1):
            decrease = history[-2] - history[-1]
        with self.lock:
            self.iterations += 1
            self.runs.add(id(history))
            self.worst_row_error = max(self.worst_row_error, row_err)
            self.worst_decrease = max(self.worst_decrease, decrease)
            if decrease > LL_DECREASE_TOL or row_err > ROW_SUM_TOL or np.any(tau < 0):
                self.violations.append((len(history), decrease, row_err))


AUDIT = EMAudit()

# (criterion number, passed, detail) appended by the acceptance suite
ACCEPTANCE = []


@pytest.fixture(scope="session", autouse=True)
def em_audit():
    lpa.ITERATION_HOOKS.append(AUDIT)
    yield AUDIT
    lpa.ITERATION_HOOKS.remove(AUDIT)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number, passed, detail in sorted(ACCEPTANCE):
            terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    terminalreporter.write_line(
        f"EM audit: {len(AUDIT.runs)} runs, {AUDIT.iterations} E-steps, "
        f"worst LL decrease {AUDIT.worst_decrease:.3g}, worst |row sum - 1| {AUDIT.worst_row_error:.3g}, "
        f"violations {len(AUDIT.violations)}")


def pytest_sessionfinish(session, exitstatus):
    if AUDIT.violations and exitstatus == 0:
        session.exitstatus = 1

import numpy as np
import pytest
import torch

from tdsr.supervisors import surrogate_bundle

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def bundle():
    # shared read-only bundle; tests that count calls or change dtype build their own
    return surrogate_bundle(0)


@pytest.fixture
def fresh_bundle():
    return surrogate_bundle(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion, printed at the end of the session."""
    def _report(criterion, passed, detail):
        status = "LOGGED" if passed is None else ("PASS" if passed else "FAIL")
        ACCEPTANCE_LINES[criterion] = f"criterion {criterion:>2}: {status}  {detail}"
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])

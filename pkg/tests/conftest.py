import numpy as np
import pytest

from stdmarker.dataset import StudySample
from stdmarker.simgen import default_scenario, generate_sample
from stdmarker.standardize import standardize_sample


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def sim_sample(scenario):
    return generate_sample(scenario, 11)


@pytest.fixture(scope="session")
def sim_std(sim_sample):
    return standardize_sample(sim_sample)


def make_sample(d, y, x=None):
    d = np.asarray(d)
    x = np.full(len(d), "all", dtype=object) if x is None else np.asarray(x, dtype=object)
    return StudySample(d, np.asarray(y, dtype=float), x)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import settings

from tissuevo.features import Case
from tissuevo.phantom import default_config, generate_phantom
from tissuevo.roi import roi_from_t1_t2

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")


def phantom_case(seed, patient=None):
    out = generate_phantom(default_config(seed))
    roi = roi_from_t1_t2(out.t1_mask, out.t2_mask, 1)
    return Case(patient or f"ph{seed}", out.volume, roi)


@pytest.fixture(scope="session")
def phantom_cases():
    return [phantom_case(100 + s) for s in range(6)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria report one line each; printed after the run.
ACCEPTANCE_LINES = {}


def record_criterion(number, title, ok, detail=""):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])

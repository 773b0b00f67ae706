import os

import numpy as np
import pytest
import scipy.linalg as spla
from hypothesis import settings

from sparsecare.descriptor import Index1Descriptor
from sparsecare.synthetic import random_index1_model, scalar_model

# reproducible property runs; the numerical tolerances are checked, not luck
settings.register_profile('repro', derandomize=True, print_blob=True)
settings.register_profile('random', print_blob=True)
settings.load_profile(os.environ.get('HYPOTHESIS_PROFILE', 'repro'))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scalar():
    """x' = x + u, y = x."""
    return scalar_model()


@pytest.fixture
def scalar_dae():
    """E1=1, J1=0, J2=1, J3=4, J4=2, B1=1, B2=0, C1=1, C2=0: reduced A = -2."""
    return Index1Descriptor.from_blocks([[1.0]], [[0.0]], [[1.0]], [[4.0]], [[2.0]],
                                        [[1.0]], [[0.0]], [[1.0]], [[0.0]])


@pytest.fixture
def small_model():
    return random_index1_model(30, 20, seed=5)


@pytest.fixture
def small_unstable():
    return random_index1_model(30, 20, seed=6, unstable=2)


def care_oracle(E, A, B, C):
    """Stabilizing CARE solution via scipy on the equivalent standard-form problem."""
    # Y = E^T X E solves the standard CARE for (E^{-1} A, E^{-1} B, C).
    Einv = np.linalg.inv(E)
    Y = spla.solve_continuous_are(Einv @ A, Einv @ B, C.T @ C, np.eye(B.shape[1]))
    return Einv.T @ Y @ Einv


# PASS/FAIL lines of the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section('acceptance criteria')
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

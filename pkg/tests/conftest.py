"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from learndiag import dataio


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def dina_synth():
    """Moderate synthetic conjunctive dataset reused by estimator tests."""
    return dataio.generate_synthetic_dina(800, 40, 4, (0.1, 0.3), (0.1, 0.3), seed=7)


@pytest.fixture(scope="session")
def irt_synth():
    """Moderate synthetic 3PL dataset reused by estimator tests."""
    return dataio.generate_synthetic_irt(1500, 40, seed=3)

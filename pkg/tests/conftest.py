"""Shared fixtures and the acceptance summary printed at the end of a run."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rfassign.data import Dataset, MechanismSpec, apply_mechanism, gen_friedman1

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def friedman200():
    return gen_friedman1(200, 1.0, 11)


@pytest.fixture
def corrupted200(friedman200):
    return apply_mechanism(friedman200, MechanismSpec.default("MCAR"), 5)


def scramble(dataset: Dataset, seed: int) -> Dataset:
    """Replace every masked placeholder with arbitrary finite junk."""
    rng = np.random.default_rng(seed)
    junk = rng.normal(0.0, 1e3, dataset.features.shape)
    return dataset.with_features(np.where(dataset.mask, junk, dataset.features))

import numpy as np
import pytest

from scnet import datasets

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def shapes_small():
    """A small train/test split of the synthetic shapes data."""
    full = datasets.gen_shapes2d(700, 3)
    return datasets.split(full, [5 / 7, 2 / 7], 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

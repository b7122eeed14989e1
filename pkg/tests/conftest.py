import numpy as np
import pytest

from l1ns.core import SubspaceCollection, orthonormalize

ACCEPTANCE_LINES = []


def random_basis(rng, D, r):
    return orthonormalize(rng.standard_normal((D, r)))


def random_collection(rng, n, D, r):
    return SubspaceCollection.from_bases([random_basis(rng, D, r) for _ in range(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

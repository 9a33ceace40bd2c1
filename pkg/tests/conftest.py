import numpy as np
import pytest

from foltr.data import Dataset, QueryGroup
from foltr.synthetic import separable_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synthetic():
    return separable_dataset(n_queries=40, docs_per_query=10, n_features=5, seed=3)


@pytest.fixture
def tiny_dataset():
    q1 = QueryGroup("1", [[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]], [0, 2, 1])
    q2 = QueryGroup("2", [[1.0, 1.0], [0.0, 0.0]], [1, 0])
    return Dataset((q1, q2), 2, 3)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_lines(request):
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

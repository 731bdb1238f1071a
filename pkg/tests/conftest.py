import numpy as np
import pytest

from brainmap.datagen import GenSpec, generate
from brainmap.graph import make_subject, Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sym_corr(gen, n):
    """Random symmetric matrix in [-1, 1] with unit diagonal."""
    a = gen.uniform(-1, 1, size=(n, n))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 1.0)
    return a


@pytest.fixture
def toy_dataset(rng):
    subjects = [make_subject(f"s{i}", sym_corr(rng, 6), sym_corr(rng, 6), i % 2) for i in range(8)]
    return Dataset(tuple(subjects), 2)


@pytest.fixture(scope="session")
def small_generated():
    return generate(GenSpec(n_subjects=40, seed=3))


_CRITERIA = []


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance line; shown in the terminal summary."""
    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)

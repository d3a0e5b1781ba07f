import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bpatch.model import CategoricalDataset, Hyperparameters, ParentSet  # noqa: E402

HP_DICT = dict(alpha=0.5, gamma=0.5, sigma1=5.0, sigma2=0.5, lambda0=0.001, lam=2.0,
               mu0=0.001, mu=1.0)


def tiny_instance(seed, N, S, P, V=2, M=2):
    r = np.random.default_rng(seed)
    return (r.integers(0, V, (N, P)), r.integers(0, M, N),
            r.integers(0, V, (S, P)), r.integers(0, M, S))


@pytest.fixture
def hp():
    return Hyperparameters()


@pytest.fixture
def toy():
    """3 cases, 2 parents, 2 binary features."""
    X, Y, Xp, Yp = tiny_instance(11, 3, 2, 2)
    card = np.array([2, 2])
    return CategoricalDataset(X, card, Y, 2), ParentSet(Xp, card, Yp, 2)


@pytest.fixture
def small_problem():
    """Random 3-valued data big enough for short chains."""
    r = np.random.default_rng(4)
    card = np.full(4, 3)
    data = CategoricalDataset(r.integers(0, 3, (12, 4)), card, r.integers(0, 2, 12), 2)
    parents = ParentSet(r.integers(0, 3, (4, 4)), card, np.array([0, 1, 0, 1]), 2)
    return data, parents


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

from __future__ import annotations

import numpy as np
import pytest

from icarsel.graph import build_precision, chain_graph, random_connected_graph
from icarsel.spectral import decompose

# filled by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def chain3():
    return decompose(build_precision(chain_graph(3)))


def random_instance(rng, n, p):
    """Random connected graph, its basis, and an intercept-first design."""
    g = random_connected_graph(n, rng)
    basis = decompose(build_precision(g))
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    return g, basis, X


def dense_H(g):
    W = g.similarity_matrix()
    return np.diag(W.sum(axis=1)) - W

import numpy as np
import pytest

from afdgcf import dataset, graph


def random_bipartite(rng, p, q, extra=0.3):
    """Every user and item gets at least one train edge."""
    pairs = {(u, int(rng.integers(0, q))) for u in range(p)}
    pairs |= {(int(rng.integers(0, p)), i) for i in range(q)}
    pairs |= {(int(rng.integers(0, p)), int(rng.integers(0, q))) for _ in range(int(extra * p * q))}
    return dataset.from_pairs(p, q, pairs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds(rng):
    return random_bipartite(rng, 6, 7)


@pytest.fixture
def small_adj(small_ds):
    return graph.normalize_symmetric(graph.build_adjacency(small_ds))


_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL outcome for an acceptance criterion."""
    def record(number, passed, detail):
        _VERDICTS[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])

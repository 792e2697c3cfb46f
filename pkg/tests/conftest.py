import numpy as np
import pytest

from mfae.graph import SparseGraph


def graph(n, edges):
    return SparseGraph.from_edges(n, edges)


@pytest.fixture
def path3():
    return graph(3, [(0, 1), (1, 2)])


@pytest.fixture
def triangle():
    return graph(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def star5():
    return graph(5, [(0, k) for k in range(1, 5)])


@pytest.fixture
def two_cliques():
    """Two 5-cliques joined by the edge 4-5."""
    edges = [(a, b) for a in range(5) for b in range(a + 1, 5)]
    edges += [(a + 5, b + 5) for a, b in edges]
    edges.append((4, 5))
    return graph(10, edges)


def random_graph(rng, n, p):
    upper = np.triu(rng.random((n, n)) < p, 1)
    return SparseGraph.from_edges(n, np.argwhere(upper))


# One PASS/FAIL line per acceptance criterion, printed after the run.
ACCEPTANCE: list[str] = []


def record(criterion: int, ok: bool, detail: str, status: str | None = None) -> bool:
    status = status or ("PASS" if ok else "FAIL")
    ACCEPTANCE.append(f"criterion {criterion}: {status}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from preg.data import random_connected_graph  # noqa: F401  re-exported for test modules
from preg.graph import build_graph


@pytest.fixture
def path3():
    return build_graph([(0, 1), (1, 2)], 3)


@pytest.fixture
def path_Z():
    return np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL/SKIP line for the acceptance summary, then assert."""

    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

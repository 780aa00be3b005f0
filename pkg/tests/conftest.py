import numpy as np
import pytest

from apiselect.core import CostTable, Record

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def worked_record():
    """Base and add-on outputs from the combiner walk-through."""
    return Record(
        id="walkthrough",
        predictions=({"person": 0.8, "car": 0.7}, {"car": 0.5, "bike": 0.4}),
        truth=frozenset({"car", "bike"}),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_instance_parts(rng, n_range=(4, 10), k_range=(2, 4), places=2, max_cost=10.0):
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    k = int(rng.integers(k_range[0], k_range[1] + 1))
    acc = rng.uniform(size=(n, k))
    costs = CostTable(tuple(np.round(rng.uniform(0, max_cost, size=k), places)), int(rng.integers(k)))
    budget = costs.base_cost + float(rng.uniform(0, costs.hatted_costs().max() + 1e-3))
    return acc, costs, budget

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from swarm_gov.topology import DependencyGraph, ServiceSpec

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_graph(n, edges, latency=0.02, capacity=40.0, cost=0.1, layers=None):
    """Small hand-built graph; layers default to the longest-path depth."""
    edges = frozenset((int(a), int(b)) for a, b in edges)
    if layers is None:
        depth = {v: 0 for v in range(n)}
        for _ in range(n):
            for a, b in sorted(edges):
                depth[b] = max(depth[b], depth[a] + 1)
        layers = [depth[v] for v in range(n)]
    attrs = {
        v: ServiceSpec(latency, capacity, cost, 8, layers[v]) for v in range(n)
    }
    return DependencyGraph(frozenset(range(n)), edges, attrs, 0)


@pytest.fixture
def chain3():
    return make_graph(3, [(0, 1), (1, 2)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, collected by tests/test_acceptance.py and printed once
# at the end of the session
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

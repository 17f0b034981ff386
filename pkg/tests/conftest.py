import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hieragg.hierarchy import build_hierarchy
from hieragg.synth import SynthSpec, generate

settings.register_profile(
    "repo",
    max_examples=60,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def world():
    """Default synthetic hierarchy and panel (100 leaves, 182 weeks)."""
    return generate(SynthSpec(seed=3))


@pytest.fixture
def two_leaf():
    return build_hierarchy([("a", "root"), ("b", "root")])


def random_tree(rng, max_nodes=200):
    """Random rooted tree with at most ``max_nodes`` nodes, ids n000, n001, ..."""
    size = int(rng.integers(2, max_nodes + 1))
    edges = [(f"n{i:03d}", f"n{int(rng.integers(0, i)):03d}") for i in range(1, size)]
    return build_hierarchy(edges)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one entry per acceptance criterion: number -> (passed, detail)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")

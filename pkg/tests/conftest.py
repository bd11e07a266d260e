import pytest

from semiqa.embeddings import HashingEmbedder
from semiqa.graph import Node, build_graph
from semiqa.synthetic import case_study_graph, g0 as make_g0


@pytest.fixture
def g0():
    return make_g0()


@pytest.fixture
def parallel_graph():
    """Two parallel relations r1 and r2 from A to B."""
    return build_graph(
        [Node("A", "x", "alpha"), Node("B", "y", "beta")],
        [("A", "r1", "B"), ("A", "r2", "B")],
    )


@pytest.fixture
def star3():
    return build_graph(
        [Node("C", "hub", "center"), Node("L1", "leaf"), Node("L2", "leaf"), Node("L3", "leaf")],
        [("C", "spoke", "L1"), ("C", "spoke", "L2"), ("C", "spoke", "L3")],
    )


@pytest.fixture
def embedder():
    return HashingEmbedder(dim=32, seed=0)


@pytest.fixture
def mag():
    return case_study_graph()

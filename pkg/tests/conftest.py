import pytest

from qwglab.geometry import shapes_for_graph
from qwglab.graph import CurvatureProfile, MetricGraph


@pytest.fixture(scope="session")
def star_case():
    """Three-star with distinct edge lengths and a thin, smallness-satisfying vertex."""
    g = MetricGraph.star([1.0, 1.25, 1.5])
    shapes = shapes_for_graph(g, {"c": {"tau": 3.0, "d_attach": 1.5, "r_min": 0.3}})
    return g, shapes


@pytest.fixture(scope="session")
def bump():
    return CurvatureProfile.bump(0.5, 0.2, 2.0)

import numpy as np
import pytest

from graphdistill.data import Graph


def build_graph(n, edges, features=None, label=0):
    if features is None:
        features = np.ones((n, 1))
    return Graph.from_edges(n, edges, features, label)


@pytest.fixture
def path3():
    # 0 - 1 - 2
    return build_graph(3, [(0, 1), (1, 2)], np.array([[1.0], [2.0], [3.0]]))


@pytest.fixture
def k2():
    return build_graph(2, [(0, 1)])


@pytest.fixture
def triangle():
    return build_graph(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def two_triangles():
    return build_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])


@pytest.fixture
def isolated_node():
    return build_graph(1, [])

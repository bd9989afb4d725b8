import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from djam.errors import (
    DisconnectedGraph,
    DuplicateEdge,
    IndexOutOfRange,
    NonpositiveWeight,
    SelfLoop,
    UnknownEdge,
)
from djam.network import agent_weight_sum, build_network, read_edge_list, write_edge_list

from conftest import random_connected


def test_triangle(triangle):
    assert triangle.num_edges == 3
    assert triangle.edges == ((0, 1), (0, 2), (1, 2))
    assert triangle.neighbors[1] == (0, 2)
    np.testing.assert_array_equal(triangle.W, np.ones((3, 3)) - np.eye(3))


@pytest.mark.parametrize(
    "n, edges, exc",
    [
        (3, [(0, 1, 1.0), (0, 0, 1.0)], SelfLoop),
        (4, [(0, 1, 1.0), (2, 3, 1.0)], DisconnectedGraph),
        (3, [(0, 1, 1.0), (1, 0, 2.0), (1, 2, 1.0)], DuplicateEdge),
        (2, [(0, 1, 0.0)], NonpositiveWeight),
        (2, [(0, 1, -1.0)], NonpositiveWeight),
        (2, [(0, 2, 1.0)], IndexOutOfRange),
    ],
)
def test_invalid(n, edges, exc):
    with pytest.raises(exc):
        build_network(n, 1, edges)


def test_single_agent():
    net = build_network(1, 2, [])
    assert net.num_edges == 0 and agent_weight_sum(net, 0) == 0.0


@pytest.mark.parametrize("j, expected", [(0, 3.0), (1, 1.0), (3, 1.0)])
def test_star_weight_sums(j, expected):
    star = build_network(4, 1, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)])
    assert agent_weight_sum(star, j) == expected


def test_mixed_weight_sum():
    net = build_network(3, 1, [(0, 1, 0.5), (1, 2, 2.5)])
    assert agent_weight_sum(net, 1) == 3.0


def test_unknown_edge(triangle):
    star = build_network(3, 1, [(0, 1, 1.0), (0, 2, 1.0)])
    with pytest.raises(UnknownEdge):
        star.edge_index(1, 2)
    assert star.edge_index(2, 0) == 1


def test_readonly(triangle):
    with pytest.raises(ValueError):
        triangle.W[0, 1] = 3.0


def test_edge_list_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    pairs, w = random_connected(rng, 9)
    net = build_network(9, 2, [(i, j, x) for (i, j), x in zip(pairs, w)])
    write_edge_list(net, tmp_path / "e.txt")
    back = read_edge_list(tmp_path / "e.txt", p=2)
    assert back.edges == net.edges and back.n == 9
    np.testing.assert_array_equal(back.W, net.W)


def test_edge_list_one_based(tmp_path):
    (tmp_path / "e.txt").write_text("# comment\n1 2 0.5\n2 3 1  # trailing\n")
    net = read_edge_list(tmp_path / "e.txt")
    assert net.edges == ((0, 1), (1, 2))
    assert net.weights == (0.5, 1.0)
    (tmp_path / "bad.txt").write_text("1 2\n")
    with pytest.raises(ValueError):
        read_edge_list(tmp_path / "bad.txt")


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_weight_sums_match_rows(n, seed):
    rng = np.random.default_rng(seed)
    pairs, w = random_connected(rng, n)
    net = build_network(n, 1, [(i, j, x) for (i, j), x in zip(pairs, w)])
    np.testing.assert_allclose(net.weight_sums, net.W.sum(axis=1), rtol=0, atol=1e-12)
    np.testing.assert_array_equal(net.W, net.W.T)
    assert sum(len(nb) for nb in net.neighbors) == 2 * net.num_edges

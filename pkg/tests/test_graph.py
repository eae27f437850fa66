import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnet.graph import EdgeListParseError, Graph, compute_exposure, gcn_aggregate, read_edge_list, write_edge_list
from tnet.numerics import DimensionError


def test_exposure_is_mean_of_neighbour_treatments():
    g = Graph.from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
    assert compute_exposure(g, [0, 1, 0, 1, 0]).z[0] == 0.5


def test_exposure_all_control():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    np.testing.assert_array_equal(compute_exposure(g, [0, 0, 0, 0]).z, 0.0)


def test_path_graph_exposure():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    np.testing.assert_array_equal(compute_exposure(g, [1, 0, 1]).z, [0.0, 1.0, 0.0])


def test_isolated_units_get_zero_and_a_warning(caplog):
    g = Graph.from_edges(3, [(0, 1)])
    with caplog.at_level(logging.WARNING):
        e = compute_exposure(g, [1, 1, 1])
    assert e.z[2] == 0.0 and e.n_isolated == 1
    assert "isolated" in caplog.text


def test_bad_treatments():
    g = Graph.from_edges(3, [(0, 1)])
    with pytest.raises(DimensionError):
        compute_exposure(g, [1, 0])
    with pytest.raises(ValueError):
        compute_exposure(g, [2, 0, 1])


def test_edges_are_symmetrised_and_deduplicated():
    g = Graph.from_edges(3, [(0, 1), (1, 0), (1, 1), (2, 1), (1, 2)])
    np.testing.assert_array_equal(g.edges, [[0, 1], [1, 2]])
    np.testing.assert_array_equal(g.degrees, [1, 2, 1])


def test_gcn_empty_graph_is_activation_of_zero():
    g = Graph.from_edges(3, [])
    x = np.ones((3, 2))
    np.testing.assert_array_equal(gcn_aggregate(g, x, np.eye(2)), 0.0)


def test_gcn_single_edge_swaps_rows():
    g = Graph.from_edges(2, [(0, 1)])
    out = gcn_aggregate(g, np.eye(2), np.eye(2), "identity")
    np.testing.assert_array_equal(out, [[0.0, 1.0], [1.0, 0.0]])


def test_gcn_star_centre():
    g = Graph.from_edges(5, [(0, k) for k in range(1, 5)])
    v = np.array([1.5, -2.0])
    x = np.vstack([np.zeros(2)] + [v] * 4)
    out = gcn_aggregate(g, x, np.eye(2), "identity")
    np.testing.assert_allclose(out[0], 2 * v)


def _random_graph(data):
    n = data.draw(st.integers(2, 12))
    pairs = data.draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=30))
    return Graph.from_edges(n, pairs)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_exposure_bounds_and_permutation_equivariance(data):
    g = _random_graph(data)
    t = np.array(data.draw(st.lists(st.integers(0, 1), min_size=g.n, max_size=g.n)))
    perm = np.array(data.draw(st.permutations(range(g.n))))
    z = compute_exposure(g, t).z
    assert np.all((z >= 0) & (z <= 1))
    zp = compute_exposure(g.permuted(perm), t[perm]).z
    np.testing.assert_allclose(zp, z[perm])


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_gcn_permutation_equivariance_and_edge_order(data):
    g = _random_graph(data)
    rng = np.random.default_rng(data.draw(st.integers(0, 100)))
    x = rng.normal(size=(g.n, 3))
    w = rng.normal(size=(3, 2))
    perm = np.array(data.draw(st.permutations(range(g.n))))
    out = gcn_aggregate(g, x, w)
    np.testing.assert_allclose(gcn_aggregate(g.permuted(perm), x[perm], w), out[perm], atol=1e-12)
    shuffled = Graph.from_edges(g.n, g.edges[::-1][:, ::-1])
    np.testing.assert_array_equal(gcn_aggregate(shuffled, x, w), out)


def test_edge_list_round_trip(tmp_path):
    g = Graph.from_edges(6, [(0, 1), (2, 5), (3, 4)])
    write_edge_list(g, tmp_path / "e.txt")
    assert read_edge_list(tmp_path / "e.txt", 6) == g


def test_edge_list_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# header\n0 1\n2 x\n")
    with pytest.raises(EdgeListParseError, match=":3:"):
        read_edge_list(p)
    p.write_text("0 1 2\n")
    with pytest.raises(EdgeListParseError, match=":1:"):
        read_edge_list(p)
    p.write_text("0 9\n")
    with pytest.raises(EdgeListParseError):
        read_edge_list(p, n=5)

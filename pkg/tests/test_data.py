import numpy as np
import pytest

from tnet.data import NetworkDataset, load_dataset, save_dataset
from tnet.graph import Graph
from tnet.numerics import DimensionError


def test_round_trip(tmp_path, tiny_data):
    save_dataset(tiny_data, tmp_path)
    back = load_dataset(tmp_path)
    assert back.graph == tiny_data.graph
    for name in ("features", "treatments", "outcomes", "exposures"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tiny_data, name))


def test_arrays_are_read_only(tiny_data):
    with pytest.raises(ValueError):
        tiny_data.outcomes[0] = 1.0


def test_shape_checks():
    g = Graph.from_edges(3, [(0, 1)])
    with pytest.raises(DimensionError):
        NetworkDataset(g, np.zeros((2, 2)), [0, 1, 0], np.zeros(3))
    with pytest.raises(DimensionError):
        NetworkDataset(g, np.zeros((3, 2)), [0, 1], np.zeros(3))


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)

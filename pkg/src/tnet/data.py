"""The networked observational dataset and its on-disk CSV layout."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .graph import Graph, compute_exposure, read_edge_list, write_edge_list
from .numerics import DimensionError

FEATURES_FILE = "features.csv"
UNITS_FILE = "units.csv"
EDGES_FILE = "edges.txt"


@dataclass(frozen=True, eq=False)
class NetworkDataset:
    """Covariates, binary treatments, outcomes and the interference graph for n units.

    Exposures are derived from the graph and treatments when not supplied.
    """

    graph: Graph
    features: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    exposures: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = self.graph.n
        x = np.asarray(self.features, dtype=np.float64)
        t = np.asarray(self.treatments).astype(np.int64)
        y = np.asarray(self.outcomes, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != n:
            raise DimensionError(f"features must be {n} x p, got {x.shape}")
        if t.shape != (n,) or y.shape != (n,):
            raise DimensionError("treatments and outcomes need one entry per unit")
        if self.exposures is None:
            z = compute_exposure(self.graph, t).z
        else:
            z = np.asarray(self.exposures, dtype=np.float64)
        if z.shape != (n,):
            raise DimensionError("exposures need one entry per unit")
        if np.any((z < 0) | (z > 1)):
            raise ValueError("exposures must lie in [0, 1]")
        for name, arr in (("features", x), ("treatments", t), ("outcomes", y), ("exposures", z)):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def aggregated_features(self) -> np.ndarray:
        """``D^{-1/2} A D^{-1/2} X``; the GCN weight is applied on the right afterwards."""
        ax = np.asarray(self.graph.normalized_adjacency @ self.features)
        ax.setflags(write=False)
        return ax

    def with_outcomes(self, outcomes) -> "NetworkDataset":
        return NetworkDataset(self.graph, self.features, self.treatments, outcomes, self.exposures)

    def permuted(self, perm: np.ndarray) -> "NetworkDataset":
        return NetworkDataset(self.graph.permuted(perm), self.features[perm], self.treatments[perm],
                              self.outcomes[perm])


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(ds: NetworkDataset, directory) -> list[Path]:
    """Write features, treatments/outcomes and edge list into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / FEATURES_FILE, d / UNITS_FILE, d / EDGES_FILE]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit"] + [f"x{k}" for k in range(ds.n_features)])
        for i, row in enumerate(ds.features):
            w.writerow([i] + [_fmt(v) for v in row])
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "treatment", "outcome", "exposure"])
        for i in range(ds.n):
            w.writerow([i, int(ds.treatments[i]), _fmt(ds.outcomes[i]), _fmt(ds.exposures[i])])
    write_edge_list(ds.graph, paths[2])
    return paths


def load_dataset(directory) -> NetworkDataset:
    """Read the trio written by :func:`save_dataset`.

    Exposures are recomputed from the graph; a stored exposure column, if
    present, must agree with them.
    """
    d = Path(directory)
    for name in (FEATURES_FILE, UNITS_FILE, EDGES_FILE):
        if not (d / name).is_file():
            raise FileNotFoundError(f"missing dataset file {d / name}")
    with open(d / FEATURES_FILE, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    units = np.array([int(r[0]) for r in rows])
    if not np.array_equal(units, np.arange(len(rows))):
        raise ValueError(f"{d / FEATURES_FILE}: unit ids must be 0..n-1 in order")
    x = np.array([[float(v) for v in r[1:]] for r in rows])
    with open(d / UNITS_FILE, newline="") as fh:
        reader = csv.DictReader(fh)
        recs = list(reader)
    if len(recs) != len(rows):
        raise ValueError("features and units files disagree on n")
    t = np.array([int(r["treatment"]) for r in recs])
    y = np.array([float(r["outcome"]) for r in recs])
    graph = read_edge_list(d / EDGES_FILE, n=len(rows))
    ds = NetworkDataset(graph, x, t, y)
    if recs and "exposure" in recs[0] and recs[0]["exposure"] not in (None, ""):
        stored = np.array([float(r["exposure"]) for r in recs])
        if not np.allclose(stored, ds.exposures, atol=1e-12):
            raise ValueError("stored exposures do not match the graph and treatments")
    return ds

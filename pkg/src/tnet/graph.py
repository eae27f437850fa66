"""Undirected simple graphs, neighbourhood exposure and GCN aggregation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numerics import DimensionError

log = logging.getLogger(__name__)


class EdgeListParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph without self-loops or repeated edges.

    Build it with :meth:`from_edges`, which symmetrises and deduplicates.
    """

    n: int
    edges: np.ndarray  # (m, 2) with i < j, lexicographically sorted

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise DimensionError(f"edge endpoint outside [0, {n})")
        e = e[e[:, 0] != e[:, 1]]
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if e.size else np.empty((0, 2), dtype=np.int64)
        e.setflags(write=False)
        return cls(int(n), e)

    @cached_property
    def adjacency_matrix(self) -> sp.csr_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        a = sp.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(self.n, self.n)).tocsr()
        a.sort_indices()
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.diff(self.adjacency_matrix.indptr)
        d.setflags(write=False)
        return d

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency_matrix
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    @property
    def adjacency(self) -> list[np.ndarray]:
        return [self.neighbors(i) for i in range(self.n)]

    @property
    def n_isolated(self) -> int:
        return int((self.degrees == 0).sum())

    @cached_property
    def normalized_adjacency(self) -> sp.csr_matrix:
        """``D^{-1/2} A D^{-1/2}`` without self-loops; isolated rows are zero."""
        inv = np.zeros(self.n)
        nz = self.degrees > 0
        inv[nz] = 1.0 / np.sqrt(self.degrees[nz])
        d = sp.diags(inv)
        return (d @ self.adjacency_matrix @ d).tocsr()

    def neighbor_mean(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != self.n:
            raise DimensionError(f"expected {self.n} values, got {values.shape[0]}")
        sums = self.adjacency_matrix @ values
        d = self.degrees.reshape((-1,) + (1,) * (sums.ndim - 1))
        return np.divide(sums, d, out=np.zeros_like(sums), where=d > 0)

    def permuted(self, perm: np.ndarray) -> "Graph":
        """Relabel so that old unit ``perm[k]`` becomes unit ``k``."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph.from_edges(self.n, inv[self.edges])

    def __eq__(self, other):
        return isinstance(other, Graph) and self.n == other.n and np.array_equal(self.edges, other.edges)

    __hash__ = object.__hash__


@dataclass(frozen=True)
class Exposure:
    z: np.ndarray
    n_isolated: int = 0


def compute_exposure(graph: Graph, treatments) -> Exposure:
    """Fraction of treated neighbours for every unit.

    Isolated units get exposure 0; how many there were is recorded on the
    result and logged.
    """
    t = np.asarray(treatments)
    if t.shape != (graph.n,):
        raise DimensionError(f"treatments must have length {graph.n}, got shape {t.shape}")
    if not np.isin(t, (0, 1)).all():
        raise ValueError("treatments must be binary")
    z = graph.neighbor_mean(t.astype(np.float64))
    iso = graph.n_isolated
    if iso:
        log.warning("%d isolated units assigned exposure 0", iso)
    z.setflags(write=False)
    return Exposure(z, iso)


def gcn_aggregate(graph: Graph, features: np.ndarray, W: np.ndarray, activation: str = "relu") -> np.ndarray:
    """Symmetric-normalised neighbour sum ``act(sum_j x_j W / sqrt(d_i d_j))``; no self term."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != graph.n:
        raise DimensionError(f"features must be {graph.n} x p, got {features.shape}")
    if W.shape[0] != features.shape[1]:
        raise DimensionError(f"W has {W.shape[0]} rows, features have {features.shape[1]} columns")
    pre = graph.normalized_adjacency @ (features @ W)
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "identity":
        return pre
    raise ValueError(f"unsupported activation {activation!r}")


def read_edge_list(path, n: int | None = None) -> Graph:
    """Parse a whitespace separated, 0-indexed edge list; ``#`` lines are comments."""
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 2:
                raise EdgeListParseError(f"{path}:{lineno}: expected two ids, got {len(parts)} fields")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise EdgeListParseError(f"{path}:{lineno}: non-integer unit id in {s!r}") from None
            if a < 0 or b < 0:
                raise EdgeListParseError(f"{path}:{lineno}: negative unit id")
            pairs.append((a, b))
    inferred = max((max(p) for p in pairs), default=-1) + 1
    if n is None:
        n = inferred
    elif inferred > n:
        raise EdgeListParseError(f"{path}: unit id {inferred - 1} exceeds declared n={n}")
    return Graph.from_edges(n, pairs)


def write_edge_list(graph: Graph, path) -> None:
    with open(Path(path), "w") as fh:
        fh.write(f"# n={graph.n}\n")
        for a, b in graph.edges:
            fh.write(f"{a} {b}\n")

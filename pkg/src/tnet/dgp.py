"""Semi-synthetic networked data with known potential outcomes.

Treatments follow a deterministic threshold on own plus neighbourhood
propensity; outcomes are

    homo:    y = t + z + po + 0.5 po_N + e
    hete:    homo + t (po + 0.5 po_N)
    hete_z:  hete + z (0.5 po + po_N)

with ``po = sigmoid(w2 . x)`` and ``po_N`` its neighbourhood mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from .data import NetworkDataset
from .estimation import EstimandSpec
from .graph import Graph, compute_exposure, read_edge_list
from .numerics import DimensionError, sigmoid

VARIANTS = ("homo", "hete", "hete_z")
GRAPH_KINDS = ("erdos_renyi", "preferential_attachment", "edge_list_file")
TRUTH_FILE = "truth.json"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DgpSpec:
    variant: str = "homo"
    noise_sd: float = 0.1
    covariate_dim: int = 10
    seed: int = 0
    w1: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    w2: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: expected one of {VARIANTS}, got {self.variant!r}")
        if not self.noise_sd > 0:
            raise ConfigError("noise_sd must be positive")
        if self.covariate_dim < 1:
            raise ConfigError("covariate_dim must be >= 1")
        rng = np.random.default_rng([self.seed, 11])
        w1 = rng.standard_normal(self.covariate_dim) if self.w1 is None else np.asarray(self.w1, dtype=np.float64)
        w2 = rng.standard_normal(self.covariate_dim) if self.w2 is None else np.asarray(self.w2, dtype=np.float64)
        if w1.shape != (self.covariate_dim,) or w2.shape != (self.covariate_dim,):
            raise ConfigError("w1 and w2 must have covariate_dim entries")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "noise_sd": self.noise_sd, "covariate_dim": self.covariate_dim,
                "seed": self.seed, "w1": self.w1.tolist(), "w2": self.w2.tolist()}


@dataclass(frozen=True)
class OutcomeOracle:
    """Noise-free potential outcomes ``y_i(t, z)`` for every unit."""

    variant: str
    po: np.ndarray
    po_neigh: np.ndarray

    def __call__(self, t, z) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), self.po.shape)
        z = np.broadcast_to(np.asarray(z, dtype=np.float64), self.po.shape)
        base = self.po + 0.5 * self.po_neigh
        y = t + z + base
        if self.variant in ("hete", "hete_z"):
            y = y + t * base
        if self.variant == "hete_z":
            y = y + z * (0.5 * self.po + self.po_neigh)
        return y


@dataclass(frozen=True, eq=False)
class GeneratedDataset:
    dataset: NetworkDataset
    spec: DgpSpec
    truth: OutcomeOracle
    noise: np.ndarray
    pt: np.ndarray

    @property
    def po_values(self) -> np.ndarray:
        return self.truth.po

    @property
    def po_neigh(self) -> np.ndarray:
        return self.truth.po_neigh


def generate_graph(kind: str, n: int, param=None, seed: int = 0) -> Graph:
    """Erdos-Renyi (``param`` = edge probability), Barabasi-Albert (``param`` = m) or a file path."""
    if kind == "edge_list_file":
        return read_edge_list(param, n)
    if n < 2:
        raise ConfigError("graph needs at least 2 units")
    if kind == "erdos_renyi":
        p = float(param)
        if not 0.0 <= p <= 1.0:
            raise ConfigError("erdos_renyi edge probability must lie in [0, 1]")
        g = nx.fast_gnp_random_graph(n, p, seed=seed) if p < 1 else nx.complete_graph(n)
    elif kind == "preferential_attachment":
        m = int(param)
        if not 1 <= m < n:
            raise ConfigError("preferential_attachment needs 1 <= m < n")
        g = nx.barabasi_albert_graph(n, m, seed=seed)
    else:
        raise ConfigError(f"graph kind: expected one of {GRAPH_KINDS}, got {kind!r}")
    return Graph.from_edges(n, list(g.edges()))


def generate_covariates(n: int, spec: DgpSpec) -> np.ndarray:
    return np.random.default_rng([spec.seed, 10]).standard_normal((n, spec.covariate_dim))


def treatment_scores(graph: Graph, features: np.ndarray, spec: DgpSpec) -> tuple[np.ndarray, np.ndarray]:
    """Own propensity ``pt = sigmoid(w1 . x)`` and ``tpt = pt + mean of neighbours' pt``."""
    if features.shape != (graph.n, spec.covariate_dim):
        raise DimensionError(f"features must be {graph.n} x {spec.covariate_dim}")
    pt = sigmoid(features @ spec.w1)
    return pt, pt + graph.neighbor_mean(pt)


def generate_treatments(graph: Graph, features: np.ndarray, spec: DgpSpec) -> np.ndarray:
    """Treat units whose ``tpt`` strictly exceeds the population mean."""
    _, tpt = treatment_scores(graph, features, spec)
    return (tpt > tpt.mean()).astype(np.int64)


def outcome_oracle(graph: Graph, features: np.ndarray, spec: DgpSpec) -> OutcomeOracle:
    po = sigmoid(features @ spec.w2)
    return OutcomeOracle(spec.variant, po, graph.neighbor_mean(po))


def generate_outcomes(graph: Graph, features: np.ndarray, t, z, spec: DgpSpec,
                      noise: np.ndarray | None = None) -> tuple[np.ndarray, OutcomeOracle, np.ndarray]:
    """Observed outcomes, the noise-free oracle and the noise draw.

    Noise is drawn from ``spec.seed`` unless supplied.
    """
    if spec.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {spec.variant!r}")
    oracle = outcome_oracle(graph, features, spec)
    if noise is None:
        noise = spec.noise_sd * np.random.default_rng([spec.seed, 12]).standard_normal(graph.n)
    return oracle(t, z) + noise, oracle, noise


def generate(spec: DgpSpec, n: int, graph_kind: str = "preferential_attachment", graph_param=5,
             graph_seed: int | None = None) -> GeneratedDataset:
    graph = generate_graph(graph_kind, n, graph_param, spec.seed if graph_seed is None else graph_seed)
    return generate_on_graph(spec, graph)


def generate_on_graph(spec: DgpSpec, graph: Graph) -> GeneratedDataset:
    x = generate_covariates(graph.n, spec)
    pt, _ = treatment_scores(graph, x, spec)
    t = generate_treatments(graph, x, spec)
    z = compute_exposure(graph, t).z
    y, oracle, noise = generate_outcomes(graph, x, t, z, spec)
    return GeneratedDataset(NetworkDataset(graph, x, t, y, z), spec, oracle, noise, pt)


def true_effects(generated: GeneratedDataset, spec: EstimandSpec, rows=None) -> tuple[float, np.ndarray]:
    """Exact effect by differencing the oracle; averaged over ``rows`` (default all units)."""
    per_unit = generated.truth(*spec.first) - generated.truth(*spec.second)
    if rows is not None:
        per_unit = per_unit[np.asarray(rows)]
    return float(per_unit.mean()), per_unit


def population_psi(generated: GeneratedDataset, t: int, z: float) -> float:
    """Superpopulation dose response for the homo variant with standard normal covariates.

    ``E[sigmoid(w2 . x)] = 1/2`` by symmetry, and ``po_N`` has the same
    mean for every unit with at least one neighbour.
    """
    if generated.spec.variant != "homo":
        raise ConfigError("closed-form dose response is only available for the homo variant")
    frac_connected = 1.0 - generated.dataset.graph.n_isolated / generated.dataset.n
    return t + z + 0.5 + 0.25 * frac_connected


def save_truth(generated: GeneratedDataset, directory) -> Path:
    path = Path(directory) / TRUTH_FILE
    payload = {"dgp": generated.spec.to_dict(),
               "po": generated.truth.po.tolist(), "po_neigh": generated.truth.po_neigh.tolist(),
               "noise": generated.noise.tolist()}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return path


def load_truth(directory, dataset: NetworkDataset) -> GeneratedDataset:
    path = Path(directory) / TRUTH_FILE
    if not path.is_file():
        raise FileNotFoundError(f"no-oracle: {path} not found")
    payload = json.loads(path.read_text())
    d = payload["dgp"]
    spec = DgpSpec(d["variant"], d["noise_sd"], d["covariate_dim"], d["seed"], np.array(d["w1"]), np.array(d["w2"]))
    oracle = OutcomeOracle(spec.variant, np.array(payload["po"]), np.array(payload["po_neigh"]))
    noise = np.array(payload["noise"])
    pt = sigmoid(dataset.features @ spec.w1)
    return GeneratedDataset(dataset, spec, oracle, noise, pt)

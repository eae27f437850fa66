"""TNet parameters and inference-time evaluation of its nuisance heads.

The network has a one-layer GCN feeding a shared MLP representation, and
four heads on top of it:

* ``g1_head``: logit of P(T=1 | x, x_N)
* ``g2_head``: softmax over B+1 grid points, read as a piecewise linear
  conditional density of the exposure
* ``mu_treated`` / ``mu_control``: outcome regressions on (representation, z)
* spline coefficients per arm for the targeting perturbation eps(t, z)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import NetworkDataset
from .numerics import DimensionError, MlpParams, mlp_forward, sigmoid
from .spline import SplineBasis

PROPENSITY_CLIP = 1e-4
RATIO_FLOOR = 0.2


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    rep_dim: int = 64
    gcn_dim: int = 64
    layers: int = 3
    grid_count: int = 10
    spline_dim: int = 5
    spline_degree: int = 2
    dropout: float = 0.05
    ratio_floor: float = RATIO_FLOOR

    def __post_init__(self):
        if not self.ratio_floor > 0:
            raise ValueError("ratio_floor must be positive")
        if self.grid_count < 1:
            raise ValueError("grid_count must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")


def _sizes(n_in: int, hidden: int, n_out: int, layers: int) -> list[int]:
    return [n_in] + [hidden] * (layers - 1) + [n_out]


@dataclass
class TNetModel:
    gcn_weight: np.ndarray
    rep_mlp: MlpParams
    g1_head: MlpParams
    g2_head: MlpParams
    mu_treated: MlpParams
    mu_control: MlpParams
    eps_treated_coeffs: np.ndarray
    eps_control_coeffs: np.ndarray
    grid_count: int
    spline: SplineBasis
    config: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.g2_head.out_dim != self.grid_count + 1:
            raise DimensionError(f"g2 head must output {self.grid_count + 1} values")
        if self.eps_treated_coeffs.shape != (self.spline.dim,) or self.eps_control_coeffs.shape != (self.spline.dim,):
            raise DimensionError("spline coefficient length must match the basis dimension")
        if self.rep_mlp.in_dim != self.gcn_weight.shape[1] + self.gcn_weight.shape[0]:
            raise DimensionError("representation MLP must take [gcn output, own features]")

    @classmethod
    def init(cls, n_features: int, config: ModelConfig | None = None, seed: int = 0) -> "TNetModel":
        c = config or ModelConfig()
        rng = np.random.default_rng(seed)
        gcn = rng.uniform(-1, 1, size=(n_features, c.gcn_dim)) * np.sqrt(6.0 / n_features)
        rep = MlpParams.init(_sizes(c.gcn_dim + n_features, c.hidden, c.rep_dim, c.layers), rng, "relu", c.dropout)
        g1 = MlpParams.init(_sizes(c.rep_dim, c.hidden, 1, c.layers), rng, "identity", c.dropout)
        g2 = MlpParams.init(_sizes(c.rep_dim, c.hidden, c.grid_count + 1, c.layers), rng, "softmax", c.dropout)
        mu1 = MlpParams.init(_sizes(c.rep_dim + 1, c.hidden, 1, c.layers), rng, "identity", c.dropout)
        mu0 = MlpParams.init(_sizes(c.rep_dim + 1, c.hidden, 1, c.layers), rng, "identity", c.dropout)
        spline = SplineBasis(c.spline_dim, c.spline_degree)
        return cls(gcn, rep, g1, g2, mu1, mu0, np.zeros(spline.dim), np.zeros(spline.dim),
                   c.grid_count, spline, c)

    def heads(self) -> dict[str, MlpParams]:
        return {"rep": self.rep_mlp, "g1": self.g1_head, "g2": self.g2_head,
                "mu1": self.mu_treated, "mu0": self.mu_control}

    def parameters(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array; optimisers update these in place."""
        out = {"gcn.W": self.gcn_weight}
        for name, mlp in self.heads().items():
            for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                out[f"{name}.W{k}"] = w
                out[f"{name}.b{k}"] = b
        out["eps1"] = self.eps_treated_coeffs
        out["eps0"] = self.eps_control_coeffs
        return out

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in self.parameters().items():
            np.copyto(arr, values[name])

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def copy(self) -> "TNetModel":
        return TNetModel(self.gcn_weight.copy(), self.rep_mlp.copy(), self.g1_head.copy(), self.g2_head.copy(),
                         self.mu_treated.copy(), self.mu_control.copy(), self.eps_treated_coeffs.copy(),
                         self.eps_control_coeffs.copy(), self.grid_count, self.spline, self.config)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.parameters().values())


def clip_propensity(p):
    return np.clip(p, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)


def _as_unit_vector(v, n: int, dtype=np.float64) -> np.ndarray:
    v = np.asarray(v, dtype=dtype)
    if v.ndim == 0:
        return np.full(n, v, dtype=dtype)
    if v.shape != (n,):
        raise DimensionError(f"expected a scalar or {n} values, got shape {v.shape}")
    return v


def represent(model: TNetModel, data: NetworkDataset, training: bool = False,
              rng: np.random.Generator | None = None, rows=None) -> np.ndarray:
    """Shared representation: MLP over [GCN neighbour aggregate, own covariates]."""
    ax = data.aggregated_features
    x = data.features
    if rows is not None:
        ax, x = ax[rows], x[rows]
    if x.shape[1] != model.gcn_weight.shape[0]:
        raise DimensionError(f"model expects {model.gcn_weight.shape[0]} covariates, data has {x.shape[1]}")
    h1 = np.maximum(ax @ model.gcn_weight, 0.0)
    return mlp_forward(model.rep_mlp, np.hstack([h1, x]), training, rng)


def propensity_t(model: TNetModel, rep: np.ndarray) -> np.ndarray:
    """Unclipped P(T=1 | x, x_N); clip with :func:`clip_propensity` before dividing by it."""
    return sigmoid(mlp_forward(model.g1_head, rep)[:, 0])


def grid_trapezoid(values: np.ndarray, grid_count: int) -> np.ndarray:
    """Row-wise trapezoid integral over [0, 1] of the interpolant through ``values``."""
    return (values.sum(axis=1) - 0.5 * (values[:, 0] + values[:, -1])) / grid_count


def normalized_grid(softmax_values: np.ndarray, grid_count: int) -> np.ndarray:
    """Rescale grid heights so that each row's interpolant integrates to one."""
    return softmax_values / grid_trapezoid(softmax_values, grid_count)[:, None]


def grid_position(z: np.ndarray, grid_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower grid index and interpolation weight in [0, 1] for each z."""
    z = np.asarray(z, dtype=np.float64)
    if np.isnan(z).any() or np.any((z < 0.0) | (z > 1.0)):
        raise ValueError("exposure must lie in [0, 1]")
    u = z * grid_count
    lo = np.minimum(np.floor(u).astype(np.int64), grid_count - 1)
    return lo, u - lo


def interpolate_grid(values: np.ndarray, z: np.ndarray, grid_count: int) -> np.ndarray:
    lo, w = grid_position(z, grid_count)
    rows = np.arange(values.shape[0])
    return (1.0 - w) * values[rows, lo] + w * values[rows, lo + 1]


def exposure_grid(model: TNetModel, rep: np.ndarray) -> np.ndarray:
    """Normalised density heights at z = j/B, j = 0..B (one row per unit)."""
    return normalized_grid(mlp_forward(model.g2_head, rep), model.grid_count)


def exposure_density(model: TNetModel, rep: np.ndarray, z) -> np.ndarray:
    z = _as_unit_vector(z, rep.shape[0])
    return interpolate_grid(exposure_grid(model, rep), z, model.grid_count)


def outcome(model: TNetModel, rep: np.ndarray, t, z) -> np.ndarray:
    """Outcome regression at arbitrary (t, z); scalars broadcast to every unit."""
    n = rep.shape[0]
    t = _as_unit_vector(t, n, np.int64)
    z = _as_unit_vector(z, n)
    out = np.empty(n)
    inp = np.hstack([rep, z[:, None]])
    for arm, head in ((1, model.mu_treated), (0, model.mu_control)):
        sel = t == arm
        if sel.any():
            out[sel] = mlp_forward(head, inp[sel])[:, 0]
    return out


def perturbation(model: TNetModel, t, z) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    t = _as_unit_vector(t, len(z), np.int64)
    phi = model.spline(z)
    return np.where(t == 1, phi @ model.eps_treated_coeffs, phi @ model.eps_control_coeffs)


@dataclass
class NuisanceValues:
    g1: np.ndarray      # clipped propensity of the requested arm
    g2: np.ndarray
    mu: np.ndarray
    eps: np.ndarray
    floor: float = RATIO_FLOOR

    @property
    def clever(self) -> np.ndarray:
        """1 / max(g1 g2, floor)."""
        return 1.0 / np.maximum(self.g1 * self.g2, self.floor)

    @property
    def floored(self) -> np.ndarray:
        return self.g1 * self.g2 < self.floor


def nuisances(model: TNetModel, data: NetworkDataset, t=None, z=None, rep: np.ndarray | None = None) -> NuisanceValues:
    """Evaluation-mode nuisances at (t, z); defaults to the observed values."""
    if rep is None:
        rep = represent(model, data)
    n = data.n
    t = data.treatments if t is None else _as_unit_vector(t, n, np.int64)
    z = data.exposures if z is None else _as_unit_vector(z, n)
    p1 = propensity_t(model, rep)
    g1 = clip_propensity(np.where(t == 1, p1, 1.0 - p1))
    return NuisanceValues(g1, exposure_density(model, rep, z), outcome(model, rep, t, z), perturbation(model, t, z),
                          model.config.ratio_floor)


def config_hash(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def save_checkpoint(model: TNetModel, path, train_config_hash: str = "") -> None:
    meta = {"grid_count": model.grid_count, "spline": model.spline.to_dict(),
            "model_config": asdict(model.config), "train_config_hash": train_config_hash,
            "activations": {k: m.activation for k, m in model.heads().items()}}
    arrays = {k.replace(".", "__"): v for k, v in model.parameters().items()}
    with open(Path(path), "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[TNetModel, dict]:
    with np.load(Path(path), allow_pickle=False) as f:
        meta = json.loads(str(f["__meta__"]))
        arrays = {k.replace("__", "."): f[k] for k in f.files if k != "__meta__"}
    cfg = ModelConfig(**meta["model_config"])
    n_features = arrays["gcn.W"].shape[0]
    model = TNetModel.init(n_features, cfg)
    if set(arrays) != set(model.parameters()):
        raise ValueError("checkpoint parameters do not match the model layout")
    model.load_parameters(arrays)
    return model, meta

"""Metrics and experiment harnesses: double-robustness stress arms and error-vs-n sweeps."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import NetworkDataset
from .dgp import ConfigError, DgpSpec, GeneratedDataset, generate, true_effects
from .estimation import EffectEstimate, EstimandSpec, estimate_effect
from .models import TNetModel
from .training import OverlapWarning, TrainConfig, train

MAPE_GUARD = 1e-8
CORRUPTION_TARGETS = ("none", "propensity", "outcome", "both")
CORRUPTION_MODES = ("freeze_random_init", "constant", "label_shuffle")


@dataclass
class MetricReport:
    split: str
    mae_average: dict[str, float] = field(default_factory=dict)
    pehe_individual: dict[str, float] = field(default_factory=dict)
    mape_average: dict[str, float | None] = field(default_factory=dict)
    mape_individual: dict[str, float | None] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for label in self.mae_average:
            out.append({"split": self.split, "estimand": label, "mae": self.mae_average[label],
                        "pehe": self.pehe_individual.get(label), "mape": self.mape_average.get(label),
                        "mape_individual": self.mape_individual.get(label)})
        return out


def compute_metrics(estimates: list[EffectEstimate], truths: list[tuple[float, np.ndarray]],
                    split: str = "within_sample") -> MetricReport:
    """Absolute error of average effects, PEHE of per-unit effects, and their MAPE variants.

    MAPE entries are ``None`` when a true effect is (numerically) zero.
    """
    if split not in ("within_sample", "out_of_sample"):
        raise ValueError(f"unknown split {split!r}")
    if len(estimates) != len(truths):
        raise ValueError("need one truth per estimate")
    report = MetricReport(split)
    for est, (tau, tau_i) in zip(estimates, truths):
        label = est.spec.label
        report.mae_average[label] = abs(est.average - tau)
        report.mape_average[label] = None if abs(tau) < MAPE_GUARD else abs((tau - est.average) / tau)
        if est.per_unit is not None:
            tau_i = np.asarray(tau_i, dtype=np.float64)
            if est.per_unit.shape != tau_i.shape:
                raise ValueError(f"{label}: per-unit lengths differ ({est.per_unit.shape} vs {tau_i.shape})")
            diff = est.per_unit - tau_i
            report.pehe_individual[label] = float(np.sqrt(np.mean(diff ** 2)))
            report.mape_individual[label] = (None if np.any(np.abs(tau_i) < MAPE_GUARD)
                                             else float(np.mean(np.abs(diff / tau_i))))
    return report


def within_out_split(n, fractions=(0.8, 0.2), seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random node split into (train, held-out) index arrays, both sorted."""
    if isinstance(n, NetworkDataset):
        n = n.n
    f_train, f_out = fractions
    if f_train < 0 or f_out < 0 or f_train + f_out > 1 + 1e-12:
        raise ConfigError("split fractions must be non-negative and sum to at most 1")
    n_train = int(round(f_train * n))
    n_out = min(int(round(f_out * n)), n - n_train)
    if n_train == 0:
        raise ConfigError("training split is empty")
    perm = np.random.default_rng([seed, 3]).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_out])


# -- corruption -------------------------------------------------------------------


@dataclass(frozen=True)
class CorruptionSpec:
    target: str = "none"
    mode: str = "freeze_random_init"

    def __post_init__(self):
        if self.target not in CORRUPTION_TARGETS:
            raise ConfigError(f"corruption target must be one of {CORRUPTION_TARGETS}")
        if self.mode not in CORRUPTION_MODES:
            raise ConfigError(f"corruption mode must be one of {CORRUPTION_MODES}")

    @property
    def outcome(self) -> bool:
        return self.target in ("outcome", "both")

    @property
    def propensity(self) -> bool:
        return self.target in ("propensity", "both")


def _zero_last_layer(mlp):
    mlp.weights[-1][:] = 0.0
    mlp.biases[-1][:] = 0.0


def corrupt(data: NetworkDataset, cfg: TrainConfig, corruption: CorruptionSpec,
            train_rows=None) -> tuple[TNetModel, TrainConfig]:
    """Initial model and config that keep the targeted nuisance(s) misspecified.

    ``freeze_random_init`` leaves heads at initialisation; ``constant`` makes
    them output 0 (outcome), 1/2 (propensity) and a uniform density;
    ``label_shuffle`` copies heads fitted on permuted treatments and
    outcomes. In every mode the heads are then frozen.
    """
    model = TNetModel.init(data.n_features, cfg.model, seed=cfg.seed)
    if corruption.target == "none":
        return model, cfg
    run_cfg = replace(cfg, freeze_outcome=corruption.outcome, freeze_propensity=corruption.propensity)
    if corruption.mode == "constant":
        if corruption.outcome:
            _zero_last_layer(model.mu_treated)
            _zero_last_layer(model.mu_control)
        if corruption.propensity:
            _zero_last_layer(model.g1_head)
            _zero_last_layer(model.g2_head)
    elif corruption.mode == "label_shuffle":
        perm = np.random.default_rng([cfg.seed, 4]).permutation(data.n)
        shuffled = NetworkDataset(data.graph, data.features, data.treatments[perm], data.outcomes[perm])
        donor = train(shuffled, replace(cfg, targeted=False), train_rows).model
        if corruption.outcome:
            model.mu_treated, model.mu_control = donor.mu_treated, donor.mu_control
        if corruption.propensity:
            model.g1_head, model.g2_head = donor.g1_head, donor.g2_head
    return model, run_cfg


# -- experiments -------------------------------------------------------------------


def _quiet_estimate(model, data, spec, method, rows=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverlapWarning)
        return estimate_effect(model, data, spec, method, rows)


def main_estimands(data: NetworkDataset) -> list[EstimandSpec]:
    zbar = float(data.exposures.mean())
    return [EstimandSpec("AME", (1, 0.0), (0, 0.0)), EstimandSpec("ASE", (0, zbar), (0, 0.0)),
            EstimandSpec("ATE", (1, zbar), (0, 0.0))]


def dr_stress(dgp: DgpSpec, n: int, config: TrainConfig | None = None, mode: str = "freeze_random_init",
              graph_kind: str = "preferential_attachment", graph_param=5,
              generated: GeneratedDataset | None = None) -> list[dict]:
    """Train the four corruption arms and report absolute errors for tnet and plugin.

    Returns 8 rows (arm x method) with the absolute error of each main
    average effect.
    """
    cfg = config or TrainConfig()
    g = generated or generate(dgp, n, graph_kind, graph_param)
    data = g.dataset
    specs = main_estimands(data)
    truths = [true_effects(g, s)[0] for s in specs]
    rows = []
    for target in CORRUPTION_TARGETS:
        init, run_cfg = corrupt(data, cfg, CorruptionSpec(target, mode))
        model = train(data, run_cfg, model=init).model
        for method in ("tnet", "plugin"):
            row = {"arm": target, "method": method, "mode": mode, "n": data.n, "seed": cfg.seed}
            for spec, tau in zip(specs, truths):
                row[f"{spec.kind}_error"] = abs(_quiet_estimate(model, data, spec, method).average - tau)
            rows.append(row)
    return rows


def log_log_slope(ns, errors) -> float:
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(errors, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class SweepResult:
    rows: list[dict]
    decreasing: bool
    slope: float | None


def convergence_sweep(dgp: DgpSpec, n_list, config: TrainConfig | None = None, repeats: int = 5,
                      graph_kind: str = "preferential_attachment", graph_param=5,
                      method: str = "tnet") -> SweepResult:
    """Mean AME absolute error (and SD over repeats) for each sample size.

    The outcome and treatment mechanisms (``w1``, ``w2``) stay fixed;
    repeat ``r`` redraws graph, covariates, noise and training seed from
    ``dgp.seed + r``.
    """
    cfg = config or TrainConfig()
    n_list = [int(v) for v in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("n_list must be strictly increasing")
    if repeats < 3:
        raise ConfigError("convergence sweep needs at least 3 repeats")
    spec = EstimandSpec("AME", (1, 0.0), (0, 0.0))
    rows = []
    for n in n_list:
        errors = []
        for r in range(repeats):
            seed = dgp.seed + r
            rspec = DgpSpec(dgp.variant, dgp.noise_sd, dgp.covariate_dim, seed, dgp.w1, dgp.w2)
            g = generate(rspec, n, graph_kind, graph_param)
            model = train(g.dataset, replace(cfg, seed=cfg.seed + r)).model
            est = _quiet_estimate(model, g.dataset, spec, method).average
            errors.append(abs(est - true_effects(g, spec)[0]))
        rows.append({"n": n, "mean_error": float(np.mean(errors)), "sd_error": float(np.std(errors)),
                     "errors": errors})
    means = [r["mean_error"] for r in rows]
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    slope = log_log_slope(n_list, means) if len(n_list) > 1 else None
    return SweepResult(rows, decreasing, slope)


def write_series(path, xs, ys, sds=None) -> Path:
    """Plot data as CSV columns ``x, y, sd``."""
    path = Path(path)
    sds = [math.nan] * len(xs) if sds is None else sds
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "sd"])
        for x, y, s in zip(xs, ys, sds):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(s))])
    return path

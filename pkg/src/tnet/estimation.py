"""Dose-response and effect estimates from a trained TNet, plus seed bootstrap intervals."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import NetworkDataset
from .models import TNetModel, nuisances
from .training import DivergenceError, OverlapWarning, TrainConfig, train

log = logging.getLogger(__name__)

KINDS = ("AME", "ASE", "ATE", "IME", "ISE", "ITE", "custom")
INDIVIDUAL = ("IME", "ISE", "ITE")
MIN_REPLICATES = 20


@dataclass(frozen=True)
class EstimandSpec:
    """A contrast between potential outcomes at ``first=(t, z)`` and ``second=(t', z')``."""

    kind: str
    first: tuple[int, float]
    second: tuple[int, float]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimand kind {self.kind!r}")
        (t, z), (t2, z2) = self.first, self.second
        for tt, zz in (self.first, self.second):
            if tt not in (0, 1):
                raise ValueError("treatment must be 0 or 1")
            if not 0.0 <= zz <= 1.0:
                raise ValueError("exposure must lie in [0, 1]")
        object.__setattr__(self, "first", (int(t), float(z)))
        object.__setattr__(self, "second", (int(t2), float(z2)))
        if self.kind != "custom" and self.first == self.second:
            raise ValueError(f"{self.kind} needs two distinct (t, z) points")
        if self.kind in ("AME", "IME") and (z != 0.0 or z2 != 0.0):
            raise ValueError("main effects compare treatments at zero exposure")
        if self.kind in ("ASE", "ISE") and (t != 0 or t2 != 0):
            raise ValueError("spillover effects compare exposures under control")

    @property
    def individual(self) -> bool:
        return self.kind in INDIVIDUAL

    @property
    def label(self) -> str:
        (t, z), (t2, z2) = self.first, self.second
        return f"{self.kind}({t},{z:g})-({t2},{z2:g})"

    def swapped(self) -> "EstimandSpec":
        return EstimandSpec(self.kind, self.second, self.first)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "first": list(self.first), "second": list(self.second)}


def default_estimands(mean_exposure: float, individual: bool = False) -> list[EstimandSpec]:
    """Main, spillover and total effects against (0, 0), at the mean observed exposure."""
    zbar = float(mean_exposure)
    names = ("IME", "ISE", "ITE") if individual else ("AME", "ASE", "ATE")
    return [EstimandSpec(names[0], (1, 0.0), (0, 0.0)),
            EstimandSpec(names[1], (0, zbar), (0, 0.0)),
            EstimandSpec(names[2], (1, zbar), (0, 0.0))]


@dataclass
class EffectEstimate:
    spec: EstimandSpec
    average: float
    per_unit: np.ndarray | None = None
    ci: tuple[float, float, float] | None = None
    method: str = "tnet"
    warnings: list[str] = field(default_factory=list)

    def record(self) -> dict:
        return {"spec": self.spec.to_dict(), "label": self.spec.label, "method": self.method,
                "average": self.average,
                "ci": None if self.ci is None else {"lower": self.ci[0], "upper": self.ci[1], "level": self.ci[2]},
                "warnings": list(self.warnings)}


def _rows(data, rows):
    return np.arange(data.n) if rows is None else np.asarray(rows, dtype=np.int64)


def psi_hat(model: TNetModel, data: NetworkDataset, t: int, z: float, rows=None,
            method: str = "tnet") -> tuple[float, np.ndarray]:
    """Targeted potential-outcome predictions ``mu + eps / (g1 g2)`` at (t, z).

    Returns the mean over ``rows`` and the per-unit values. ``method="plugin"``
    drops the correction term.
    """
    if method not in ("tnet", "plugin"):
        raise ValueError(f"unknown method {method!r}")
    rows = _rows(data, rows)
    nv = nuisances(model, data, t, z)
    per_unit = nv.mu[rows]
    if method == "tnet":
        floored = nv.floored[rows]
        if floored.mean() > 0.5:
            warnings.warn(f"overlap floor active for {floored.mean():.0%} of units at (t={t}, z={z})",
                          OverlapWarning, stacklevel=2)
        per_unit = per_unit + nv.eps[rows] * nv.clever[rows]
    return float(per_unit.mean()), per_unit


def estimate_effect(model: TNetModel, data: NetworkDataset, spec: EstimandSpec, method: str = "tnet",
                    rows=None) -> EffectEstimate:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", OverlapWarning)
        _, a = psi_hat(model, data, *spec.first, rows=rows, method=method)
        _, b = psi_hat(model, data, *spec.second, rows=rows, method=method)
    diff = a - b
    notes = [str(w.message) for w in caught if issubclass(w.category, OverlapWarning)]
    return EffectEstimate(spec, float(diff.mean()), diff if spec.individual else None, method=method,
                          warnings=notes)


def percentile_interval(values, level: float) -> tuple[float, float]:
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    tail = round(50.0 * (1.0 - level), 10)  # 2.5 rather than 2.5000000000000022
    lo, hi = np.percentile(np.asarray(values, dtype=np.float64), [tail, 100.0 - tail])
    return float(lo), float(hi)


def _replicate(args):
    data, specs, cfg, train_rows, method = args
    try:
        model = train(data, cfg, train_rows).model
    except DivergenceError:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverlapWarning)
        return [estimate_effect(model, data, s, method).average for s in specs]


def bootstrap_ci(data: NetworkDataset, specs, config: TrainConfig | None = None, replicates: int = 100,
                 level: float = 0.95, train_rows=None, method: str = "tnet", seeds=None,
                 workers: int = 1) -> list[EffectEstimate]:
    """Seed-bootstrap percentile intervals.

    The model is retrained ``replicates`` times with distinct seeds (or the
    explicit ``seeds``); the point estimate comes from ``config.seed``.
    Diverged replicates are dropped, and more than a quarter dropped is an
    error.
    """
    cfg = config or TrainConfig()
    specs = [specs] if isinstance(specs, EstimandSpec) else list(specs)
    if replicates < MIN_REPLICATES:
        raise ValueError(f"bootstrap needs at least {MIN_REPLICATES} replicates, got {replicates}")
    if seeds is None:
        seeds = [cfg.seed + 1 + r for r in range(replicates)]
    elif len(seeds) != replicates:
        raise ValueError("need one seed per replicate")
    primary = train(data, cfg, train_rows).model
    points = [estimate_effect(primary, data, s, method) for s in specs]
    jobs = [(data, specs, replace(cfg, seed=int(s)), train_rows, method) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]
    kept = [r for r in results if r is not None]
    dropped = len(results) - len(kept)
    if dropped > 0.25 * replicates:
        raise DivergenceError(f"{dropped} of {replicates} bootstrap replicates diverged")
    draws = np.array(kept)
    out = []
    for k, est in enumerate(points):
        lo, hi = percentile_interval(draws[:, k], level)
        est.ci = (lo, hi, level)
        if dropped:
            est.warnings.append(f"{dropped} diverged replicates dropped")
        if not lo <= est.average <= hi:
            log.info("point estimate %.4f outside bootstrap interval [%.4f, %.4f] for %s",
                     est.average, lo, hi, est.spec.label)
        out.append(est)
    return out

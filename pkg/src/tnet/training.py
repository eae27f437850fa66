"""Losses, gradients and the alternating optimisation schedule for TNet.

One iteration takes an Adam step on ``L1 + L2`` (propensity and outcome
fits) and then an Adam step on the targeted loss ``L3``. Gradients are
derived by hand for the fixed architecture in :func:`loss_and_grads`.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import NetworkDataset
from .models import (
    PROPENSITY_CLIP,
    ModelConfig,
    TNetModel,
    clip_propensity,
    config_hash,
    grid_position,
    grid_trapezoid,
    nuisances,
    outcome,
    represent,
)
from .numerics import Adam, MlpCache, NumericError, log_sigmoid, mlp_backward, mlp_forward, sigmoid

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8
MAX_LR_HALVINGS = 3
MIN_SUPPORT = 5.0  # effective units a spline coefficient needs before it is fitted


class DivergenceError(NumericError):
    pass


class OverlapWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    ``beta=None`` resolves to ``20 / sqrt(n_train)``. ``freeze_outcome`` and
    ``freeze_propensity`` keep the corresponding heads at their random
    initialisation and stop their gradients from reaching the shared
    representation.
    """

    alpha: float = 0.1
    gamma: float = 0.1
    beta: float | None = None
    lr_nuisance: float = 5e-3
    lr_targeted: float = 1e-3
    iterations: int = 300
    seed: int = 0
    early_stop_patience: int = 30
    val_fraction: float = 0.2
    targeted: bool = True
    final_targeting: bool = True
    min_support: float = MIN_SUPPORT
    freeze_outcome: bool = False
    freeze_propensity: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.alpha <= 0 or self.gamma <= 0:
            raise ValueError("alpha and gamma must be positive")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.lr_nuisance <= 0 or self.lr_targeted <= 0:
            raise ValueError("learning rates must be positive")
        if self.min_support < 0:
            raise ValueError("min_support must be non-negative")

    def resolved_beta(self, n: int) -> float:
        return self.beta if self.beta is not None else 20.0 / np.sqrt(n)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass
class LossReport:
    iteration: int
    l1: float
    l2: float
    l3: float
    val_l2: float = float("nan")
    eic_score_grid: dict | None = None

    def row(self) -> dict:
        return {"iteration": self.iteration, "l1": self.l1, "l2": self.l2, "l3": self.l3, "val_l2": self.val_l2}


@dataclass
class TrainResult:
    model: TNetModel
    history: list[LossReport]
    best_iteration: int
    stopped_early: bool
    lr_halvings: int
    config: TrainConfig


# -- forward / backward --------------------------------------------------------


@dataclass
class _Pass:
    rows: np.ndarray
    t: np.ndarray
    z: np.ndarray
    y: np.ndarray
    ax: np.ndarray
    pre0: np.ndarray
    rep_cache: MlpCache
    rep: np.ndarray
    g1_cache: MlpCache
    logit: np.ndarray
    p: np.ndarray
    g2_cache: MlpCache
    area: np.ndarray
    grid: np.ndarray
    lo: np.ndarray
    w: np.ndarray
    g2: np.ndarray
    mu_caches: dict
    mu: np.ndarray
    phi: np.ndarray
    eps: np.ndarray


def _forward(model: TNetModel, data: NetworkDataset, rows: np.ndarray, training: bool,
             rng: np.random.Generator | None) -> _Pass:
    ax = data.aggregated_features[rows]
    x = data.features[rows]
    t = data.treatments[rows]
    z = data.exposures[rows]
    pre0 = ax @ model.gcn_weight
    rep_cache = MlpCache()
    rep = mlp_forward(model.rep_mlp, np.hstack([np.maximum(pre0, 0.0), x]), training, rng, rep_cache)
    g1_cache = MlpCache()
    logit = mlp_forward(model.g1_head, rep, training, rng, g1_cache)[:, 0]
    g2_cache = MlpCache()
    soft = mlp_forward(model.g2_head, rep, training, rng, g2_cache)
    area = grid_trapezoid(soft, model.grid_count)
    grid = soft / area[:, None]
    lo, w = grid_position(z, model.grid_count)
    idx = np.arange(len(rows))
    g2 = (1.0 - w) * grid[idx, lo] + w * grid[idx, lo + 1]
    mu = np.empty(len(rows))
    mu_caches = {}
    inp = np.hstack([rep, z[:, None]])
    for arm, head in ((1, model.mu_treated), (0, model.mu_control)):
        sel = np.nonzero(t == arm)[0]
        cache = MlpCache()
        if len(sel):
            mu[sel] = mlp_forward(head, inp[sel], training, rng, cache)[:, 0]
        mu_caches[arm] = (sel, cache)
    phi = model.spline(z)
    eps = np.where(t == 1, phi @ model.eps_treated_coeffs, phi @ model.eps_control_coeffs)
    return _Pass(rows, t, z, data.outcomes[rows], ax, pre0, rep_cache, rep, g1_cache, logit, sigmoid(logit),
                 g2_cache, area, grid, lo, w, g2, mu_caches, mu, phi, eps)


def _arm_propensity(fp: _Pass) -> np.ndarray:
    return np.where(fp.t == 1, fp.p, 1.0 - fp.p)


def _losses(fp: _Pass, cfg: TrainConfig, beta: float, floor: float) -> dict[str, float]:
    ce = -(fp.t * log_sigmoid(fp.logit) + (1 - fp.t) * log_sigmoid(-fp.logit))
    with np.errstate(divide="ignore"):  # a zero density is caught as divergence
        l1 = float(np.sum(cfg.alpha * ce - cfg.gamma * np.log(fp.g2)))
    l2 = float(np.sum((fp.y - fp.mu) ** 2))
    q = 1.0 / np.maximum(clip_propensity(_arm_propensity(fp)) * fp.g2, floor)
    l3 = float(beta * np.sum((fp.y - fp.mu - fp.eps * q) ** 2))
    return {"l1": l1, "l2": l2, "l3": l3}


def _backward(model: TNetModel, fp: _Pass, kind: str, cfg: TrainConfig, beta: float) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    t, y, mu, g2 = fp.t, fp.y, fp.mu, fp.g2
    d_eps = None
    if kind in ("nuisance", "l1", "l2"):
        # "l1" and "l2" isolate one term of the nuisance loss
        d_logit = cfg.alpha * (fp.p - t) * (kind != "l2")
        d_g2 = -cfg.gamma / g2 * (kind != "l2")
        d_mu = -2.0 * (y - mu) * (kind != "l1")
    elif kind == "targeted":
        pt = _arm_propensity(fp)
        ptc = clip_propensity(pt)
        dens = ptc * g2
        floor = model.config.ratio_floor
        q = 1.0 / np.maximum(dens, floor)
        r = y - mu - fp.eps * q
        d_mu = -2.0 * beta * r
        d_eps = -2.0 * beta * r * q
        d_dens = -2.0 * beta * r * fp.eps * (-(q ** 2)) * (dens > floor)
        d_g2 = d_dens * ptc
        d_pt = d_dens * g2 * ((pt > PROPENSITY_CLIP) & (pt < 1.0 - PROPENSITY_CLIP))
        d_logit = d_pt * (2 * t - 1) * fp.p * (1.0 - fp.p)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")

    d_rep = np.zeros_like(fp.rep)
    if not cfg.freeze_propensity:
        gw, gb, dr = mlp_backward(model.g1_head, fp.g1_cache, d_logit[:, None])
        _collect(grads, "g1", gw, gb)
        d_rep += dr
        # interpolation -> normalised grid -> softmax output
        m = len(fp.rows)
        d_grid = np.zeros_like(fp.grid)
        idx = np.arange(m)
        np.add.at(d_grid, (idx, fp.lo), (1.0 - fp.w) * d_g2)
        np.add.at(d_grid, (idx, fp.lo + 1), fp.w * d_g2)
        c = np.ones(model.grid_count + 1)
        c[[0, -1]] = 0.5
        inner = (d_grid * fp.grid).sum(axis=1, keepdims=True)
        d_soft = (d_grid - inner * c / model.grid_count) / fp.area[:, None]
        gw, gb, dr = mlp_backward(model.g2_head, fp.g2_cache, d_soft)
        _collect(grads, "g2", gw, gb)
        d_rep += dr
    if not cfg.freeze_outcome:
        for arm, name, head in ((1, "mu1", model.mu_treated), (0, "mu0", model.mu_control)):
            sel, cache = fp.mu_caches[arm]
            if len(sel):
                gw, gb, dinp = mlp_backward(head, cache, d_mu[sel][:, None])
                d_rep[sel] += dinp[:, :-1]
            else:
                gw = [np.zeros_like(w) for w in head.weights]
                gb = [np.zeros_like(b) for b in head.biases]
            _collect(grads, name, gw, gb)
    if d_eps is not None:
        treated = fp.t == 1
        grads["eps1"] = fp.phi[treated].T @ d_eps[treated]
        grads["eps0"] = fp.phi[~treated].T @ d_eps[~treated]
    gw, gb, dinp = mlp_backward(model.rep_mlp, fp.rep_cache, d_rep)
    _collect(grads, "rep", gw, gb)
    gcn_dim = model.gcn_weight.shape[1]
    grads["gcn.W"] = fp.ax.T @ (dinp[:, :gcn_dim] * (fp.pre0 > 0))
    return grads


def _collect(grads, prefix, gw, gb):
    for k, (w, b) in enumerate(zip(gw, gb)):
        grads[f"{prefix}.W{k}"] = w
        grads[f"{prefix}.b{k}"] = b


def _check_finite(losses: dict[str, float], grads: dict[str, np.ndarray] | None = None) -> None:
    for name, v in losses.items():
        if not np.isfinite(v):
            raise NumericError(f"loss {name} is not finite ({v})")
    for name, g in (grads or {}).items():
        if not np.isfinite(g).all():
            raise NumericError(f"gradient of {name} has non-finite entries")


def _rows(data: NetworkDataset, rows) -> np.ndarray:
    return np.arange(data.n) if rows is None else np.asarray(rows, dtype=np.int64)


def loss_and_grads(model: TNetModel, data: NetworkDataset, kind: str, cfg: TrainConfig | None = None,
                   rows=None, training: bool = False, rng: np.random.Generator | None = None):
    """Losses and gradients for one step.

    ``kind="nuisance"`` differentiates ``L1 + L2`` (``"l1"`` or ``"l2"``
    alone); ``kind="targeted"`` differentiates ``L3``. Only units in ``rows`` enter the loss. Returns
    ``(losses, grads)``; frozen heads are absent from ``grads``.
    """
    cfg = cfg or TrainConfig()
    rows = _rows(data, rows)
    beta = cfg.resolved_beta(len(rows))
    fp = _forward(model, data, rows, training, rng)
    losses = _losses(fp, cfg, beta, model.config.ratio_floor)
    grads = _backward(model, fp, kind, cfg, beta)
    _check_finite(losses, grads)
    return losses, grads


def _eval_losses(model, data, cfg, rows) -> dict[str, float]:
    rows = _rows(data, rows)
    return _losses(_forward(model, data, rows, False, None), cfg, cfg.resolved_beta(len(rows)),
                   model.config.ratio_floor)


def loss_l1(model: TNetModel, data: NetworkDataset, cfg: TrainConfig | None = None, rows=None) -> float:
    """Propensity loss: alpha * cross-entropy of g1 minus gamma * log g2, summed over units."""
    return _eval_losses(model, data, cfg or TrainConfig(), rows)["l1"]


def loss_l2(model: TNetModel, data: NetworkDataset, cfg: TrainConfig | None = None, rows=None) -> float:
    return _eval_losses(model, data, cfg or TrainConfig(), rows)["l2"]


def loss_l3(model: TNetModel, data: NetworkDataset, cfg: TrainConfig | None = None, rows=None) -> float:
    """Targeted loss ``beta * sum (y - mu - eps / (g1 g2))^2`` at the observed (t, z)."""
    return _eval_losses(model, data, cfg or TrainConfig(), rows)["l3"]


# -- targeting and the score equation --------------------------------------------


def spline_score(model: TNetModel, data: NetworkDataset, rows=None) -> dict[int, np.ndarray]:
    """Per-arm ``sum_i phi_k(z_i) q_i (y_i - mu_i - eps_i q_i)`` over units in ``rows``.

    ``q_i`` is the clever covariate ``1 / (g1 g2)``. The gradient of ``L3``
    with respect to the arm's spline coefficients is ``-2 beta`` times this.
    """
    rows = _rows(data, rows)
    nv = nuisances(model, data)
    q = nv.clever[rows]
    resid = q * (data.outcomes[rows] - nv.mu[rows] - nv.eps[rows] * q)
    phi = model.spline(data.exposures[rows])
    t = data.treatments[rows]
    return {arm: phi[t == arm].T @ resid[t == arm] for arm in (1, 0)}


def fit_perturbation(model: TNetModel, data: NetworkDataset, rows=None, min_support: float = MIN_SUPPORT) -> None:
    """Minimise ``L3`` over the spline coefficients exactly, nuisances held fixed.

    For fixed nuisances ``L3`` is a least-squares problem in each arm's
    coefficients, so the fluctuation is solved in closed form; its normal
    equations are the spline-weighted score equations. A basis function whose
    summed weight over the arm's units is below ``min_support`` is not
    identified by the data and keeps a zero coefficient, so the fluctuation
    is not extrapolated into exposure ranges the arm never reaches.
    """
    rows = _rows(data, rows)
    nv = nuisances(model, data)
    q = nv.clever[rows]
    resid = data.outcomes[rows] - nv.mu[rows]
    phi = model.spline(data.exposures[rows])
    t = data.treatments[rows]
    for arm, coeffs in ((1, model.eps_treated_coeffs), (0, model.eps_control_coeffs)):
        sel = t == arm
        coeffs[:] = 0.0
        active = phi[sel].sum(axis=0) >= max(min_support, np.finfo(float).tiny)
        if not active.any():
            continue
        design = phi[sel][:, active] * q[sel, None]
        coeffs[active] = np.linalg.lstsq(design, resid[sel], rcond=None)[0]


def eic_values(y, indicator, g, mu, psi) -> np.ndarray:
    """Per-unit influence values ``indicator / g * (y - mu) + mu - psi``.

    Units whose indicator is 0 contribute no weighting term even if ``g`` is 0.
    """
    y, indicator, g, mu = (np.asarray(a, dtype=np.float64) for a in (y, indicator, g, mu))
    w = np.zeros_like(y)
    on = indicator != 0
    w[on] = indicator[on] / g[on]
    return w * (y - mu) + mu - psi


def observed_indicator(data: NetworkDataset, t: int, z: float) -> np.ndarray:
    """1 where a unit's observed treatment equals ``t`` and exposure equals ``z`` exactly."""
    return ((data.treatments == t) & (data.exposures == z)).astype(np.float64)


def eic_score(model: TNetModel, data: NetworkDataset, t: int, z: float, psi_hat: float,
              targeted: bool = False, rows=None) -> float:
    """Empirical mean of the efficient influence curve at (t, z).

    With ``targeted=True`` the outcome model is replaced by the targeted
    prediction ``mu + eps q``.
    """
    rows = _rows(data, rows)
    nv = nuisances(model, data, t, z)
    if nv.floored.all():
        warnings.warn(f"g1*g2 below {nv.floor} for every unit at (t={t}, z={z})", OverlapWarning, stacklevel=2)
    q = nv.clever
    mu = nv.mu + nv.eps * q if targeted else nv.mu
    phi = eic_values(data.outcomes, observed_indicator(data, t, z), 1.0 / q, mu, psi_hat)
    return float(phi[rows].mean())


# -- training loop ---------------------------------------------------------------


def _validation_split(train_rows: np.ndarray, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 2])
    perm = rng.permutation(train_rows)
    n_val = int(round(cfg.val_fraction * len(perm)))
    if n_val == 0 or n_val == len(perm):
        return np.sort(perm), np.empty(0, dtype=np.int64)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _val_l2(model, data, rows) -> float:
    if len(rows) == 0:
        return float("nan")
    rep = represent(model, data, rows=rows)
    mu = outcome(model, rep, data.treatments[rows], data.exposures[rows])
    return float(np.mean((data.outcomes[rows] - mu) ** 2))


def _diverged(losses: dict[str, float]) -> bool:
    return any(not np.isfinite(v) or abs(v) > DIVERGENCE_LIMIT for v in losses.values())


def train(data: NetworkDataset, cfg: TrainConfig | None = None, train_rows=None,
          model: TNetModel | None = None, callback=None) -> TrainResult:
    """Fit TNet by alternating one nuisance step and one targeted step per iteration.

    ``train_rows`` restricts every loss to those units; the remaining units
    still contribute covariates through the graph. A validation fraction of
    the training units is held out of the losses for early stopping on the
    outcome error, and the best parameters by that criterion are restored.
    ``callback(iteration, model)`` is invoked after each iteration.
    """
    cfg = cfg or TrainConfig()
    train_rows = _rows(data, train_rows)
    fit_rows, val_rows = _validation_split(train_rows, cfg)
    beta = cfg.resolved_beta(len(fit_rows))
    if model is None:
        model = TNetModel.init(data.n_features, cfg.model, seed=cfg.seed)
    params = model.parameters()
    rng = np.random.default_rng([cfg.seed, 1])
    opt_n = Adam(cfg.lr_nuisance)
    opt_t = Adam(cfg.lr_targeted)
    step_cfg = replace(cfg, beta=beta)

    history: list[LossReport] = []
    best = (np.inf, model.snapshot(), 0)
    since_best = 0
    halvings = 0
    stopped_early = False
    it = 0
    while it < cfg.iterations:
        saved = (model.snapshot(), opt_n.state_dict(), opt_t.state_dict(), rng.bit_generator.state)
        try:
            losses, grads = loss_and_grads(model, data, "nuisance", step_cfg, fit_rows, True, rng)
            if _diverged(losses):
                raise NumericError("loss out of range")
            opt_n.step(params, grads)
            l3 = float("nan")
            if cfg.targeted:
                tl, tg = loss_and_grads(model, data, "targeted", step_cfg, fit_rows, True, rng)
                if _diverged(tl):
                    raise NumericError("targeted loss out of range")
                opt_t.step(params, tg)
                l3 = tl["l3"]
            if not model.is_finite():
                raise NumericError("parameters became non-finite")
        except NumericError as exc:
            halvings += 1
            if halvings > MAX_LR_HALVINGS:
                raise DivergenceError(f"training diverged at iteration {it}: {exc}") from exc
            log.warning("divergence at iteration %d (%s); halving learning rates", it, exc)
            model.load_parameters(saved[0])
            opt_n.load_state_dict(saved[1])
            opt_t.load_state_dict(saved[2])
            rng.bit_generator.state = saved[3]
            opt_n.lr /= 2.0
            opt_t.lr /= 2.0
            continue
        it += 1
        val = _val_l2(model, data, val_rows)
        history.append(LossReport(it, losses["l1"], losses["l2"], l3, val))
        if callback is not None:
            callback(it, model)
        if len(val_rows):
            if val < best[0]:
                best = (val, model.snapshot(), it)
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.early_stop_patience:
                    stopped_early = True
                    break
    best_iteration = it
    if len(val_rows) and best[2] > 0:
        model.load_parameters(best[1])
        best_iteration = best[2]
    if cfg.targeted and cfg.final_targeting:
        fit_perturbation(model, data, train_rows, cfg.min_support)
    if not model.is_finite():
        raise DivergenceError("trained parameters are not finite")
    return TrainResult(model, history, best_iteration, stopped_early, halvings, cfg)

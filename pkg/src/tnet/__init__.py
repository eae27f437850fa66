"""Doubly robust targeted estimation of main, spillover and total effects on networks."""

from .data import NetworkDataset, load_dataset, save_dataset
from .dgp import ConfigError, DgpSpec, generate, true_effects
from .estimation import EffectEstimate, EstimandSpec, bootstrap_ci, default_estimands, estimate_effect, psi_hat
from .graph import Graph, compute_exposure
from .models import ModelConfig, TNetModel, load_checkpoint, save_checkpoint
from .training import DivergenceError, OverlapWarning, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DgpSpec", "DivergenceError", "EffectEstimate", "EstimandSpec", "Graph", "ModelConfig",
    "NetworkDataset", "OverlapWarning", "TNetModel", "TrainConfig", "bootstrap_ci", "compute_exposure",
    "default_estimands", "estimate_effect", "generate", "load_checkpoint", "load_dataset", "psi_hat",
    "save_checkpoint", "save_dataset", "train", "true_effects",
]

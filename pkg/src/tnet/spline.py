"""Clamped uniform B-spline basis on [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class SplineBasis:
    dim: int = 5
    degree: int = 2

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.dim < self.degree + 1:
            raise ValueError(f"a degree-{self.degree} clamped basis needs dim >= {self.degree + 1}")

    @property
    def knots(self) -> np.ndarray:
        n_inner = self.dim - self.degree - 1
        inner = np.linspace(0.0, 1.0, n_inner + 2)[1:-1]
        return np.r_[np.zeros(self.degree + 1), inner, np.ones(self.degree + 1)]

    def __call__(self, z) -> np.ndarray:
        """Basis matrix of shape ``(len(z), dim)``."""
        z = np.atleast_1d(np.asarray(z, dtype=np.float64))
        if np.any((z < 0.0) | (z > 1.0)) or np.isnan(z).any():
            raise ValueError("spline argument must lie in [0, 1]")
        return BSpline.design_matrix(z, self.knots, self.degree).toarray()

    def to_dict(self) -> dict:
        return {"dim": self.dim, "degree": self.degree, "knots": "clamped-uniform"}

"""Dense float64 building blocks: MLPs with explicit backward passes and Adam.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Every layer
keeps the activations it needs in a cache so that gradients can be computed
without a general autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")


class DimensionError(ValueError):
    """Raised when array shapes do not chain."""


class NumericError(FloatingPointError):
    """Raised when a loss or tensor becomes non-finite."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "softmax":
        return softmax(x)
    return x


def _activation_backward(name: str, out: np.ndarray, pre: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if name == "relu":
        return grad * (pre > 0)
    if name == "sigmoid":
        return grad * out * (1.0 - out)
    if name == "softmax":
        return out * (grad - (grad * out).sum(axis=1, keepdims=True))
    return grad


@dataclass
class MlpParams:
    """Weights of a fully connected network.

    Hidden layers use ReLU followed by (inverted) dropout; ``activation`` is
    applied to the last layer only.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "identity"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise DimensionError(f"layer {k}: bias {b.shape} does not match weight {w.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                prev = self.weights[k - 1].shape[1]
                raise DimensionError(f"layer {k}: input width {w.shape[0]} != previous output {prev}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, activation="identity", dropout_rate=0.0) -> "MlpParams":
        """He-uniform initialisation for a network with layer widths ``sizes``."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, activation, dropout_rate)

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.activation, self.dropout_rate)


@dataclass
class MlpCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)
    output: np.ndarray | None = None


def mlp_forward(params: MlpParams, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None, cache: MlpCache | None = None) -> np.ndarray:
    """Evaluate ``params`` on the rows of ``x``.

    Dropout masks are drawn from ``rng`` only when ``training`` is true and
    the rate is positive. Pass a ``MlpCache`` to record what
    :func:`mlp_backward` needs.
    """
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(f"input has shape {x.shape}, network expects {params.in_dim} columns")
    keep = 1.0 - params.dropout_rate
    drop = training and params.dropout_rate > 0.0
    if drop and rng is None:
        raise ValueError("training with dropout needs an rng")
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        if cache is not None:
            cache.inputs.append(h)
        pre = h @ w + b
        if k < last:
            h = np.maximum(pre, 0.0)
            mask = None
            if drop:
                mask = (rng.random(h.shape) < keep) / keep
                h = h * mask
            if cache is not None:
                cache.pre.append(pre)
                cache.masks.append(mask)
        else:
            h = _activate(params.activation, pre)
            if cache is not None:
                cache.pre.append(pre)
                cache.masks.append(None)
    if cache is not None:
        cache.output = h
    return h


def mlp_backward(params: MlpParams, cache: MlpCache,
                 grad_out: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Return ``(weight_grads, bias_grads, input_grad)`` for upstream gradient ``grad_out``."""
    last = len(params.weights) - 1
    gw: list[np.ndarray] = [None] * (last + 1)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * (last + 1)  # type: ignore[list-item]
    g = _activation_backward(params.activation, cache.output, cache.pre[last], grad_out)
    for k in range(last, -1, -1):
        if k < last:
            mask = cache.masks[k]
            if mask is not None:
                g = g * mask
            g = g * (cache.pre[k] > 0)
        gw[k] = cache.inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
    return gw, gb, g


class Adam:
    """Adam with bias correction over a dict of named arrays, updated in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise DimensionError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {"lr": self.lr, "step": self.step_count,
                "m": {k: a.copy() for k, a in self.m.items()},
                "v": {k: a.copy() for k, a in self.v.items()}}

    def load_state_dict(self, state: dict) -> None:
        self.lr = state["lr"]
        self.step_count = state["step"]
        self.m = {k: a.copy() for k, a in state["m"].items()}
        self.v = {k: a.copy() for k, a in state["v"].items()}

"""Feed-forward basis network trained to a MAP point estimate.

The last hidden layer supplies the basis functions phi(x); a scalar linear
head is attached only while training and is discarded afterwards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

ACTIVATIONS = ("tanh_all", "relu_then_tanh", "relu_all")
LOSSES = ("mse", "cross_entropy")


@dataclass(frozen=True)
class NetworkConfig:
    layer_widths: tuple = (50, 50, 50)
    activation: str = "tanh_all"
    l2_penalty: float = 1e-4
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 1000
    batch_size: int = 64
    # datasets up to this size are trained full-batch
    full_batch_max: int = 200
    # caps gradient updates in the mini-batch regime; None keeps whole epochs
    max_updates: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if not self.layer_widths or any(w <= 0 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.max_updates is not None and self.max_updates <= 0:
            raise ValueError("max_updates must be positive when set")

    @property
    def D(self) -> int:
        return self.layer_widths[-1]

    def hidden_activations(self) -> list[str]:
        n = len(self.layer_widths)
        if self.activation == "tanh_all":
            return ["tanh"] * n
        if self.activation == "relu_all":
            return ["relu"] * n
        return ["relu"] * (n - 1) + ["tanh"]


@dataclass
class BasisNetwork:
    """Weights/biases of the hidden stack followed by the scalar head.

    ``weights[i]`` has shape (fan_in, fan_out); the last entry is the head.
    """

    weights: list
    biases: list
    config: NetworkConfig
    final_loss: Optional[float] = field(default=None, compare=False)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def D(self) -> int:
        return self.config.D

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, vec) -> "BasisNetwork":
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {vec.size}")
        weights, biases, i = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[i:i + w.size].reshape(w.shape).copy())
            i += w.size
            biases.append(vec[i:i + b.size].copy())
            i += b.size
        return BasisNetwork(weights, biases, self.config)

    def copy(self) -> "BasisNetwork":
        return BasisNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                            self.config, self.final_loss)

    def features(self, X) -> np.ndarray:
        return forward_features(self, X)

    def head(self, X) -> np.ndarray:
        return self.features(X) @ self.weights[-1][:, 0] + self.biases[-1][0]


def init_params(config: NetworkConfig, n_inputs: int, seed=None) -> BasisNetwork:
    """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    if n_inputs <= 0:
        raise ValueError("network needs at least one input")
    rng = np.random.default_rng(seed)
    sizes = (n_inputs, *config.layer_widths, 1)
    weights = [rng.standard_normal((a, b)) / np.sqrt(a) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return BasisNetwork(weights, biases, config)


def _as_rows(net: BasisNetwork, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} inputs per row, got {X.shape[1]}")
    return X


def _hidden_forward(net: BasisNetwork, X: np.ndarray) -> list[np.ndarray]:
    acts = [X]
    for W, b, kind in zip(net.weights[:-1], net.biases[:-1], net.config.hidden_activations()):
        z = acts[-1] @ W + b
        acts.append(np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0))
    return acts


def forward_features(net: BasisNetwork, X) -> np.ndarray:
    """Basis functions phi(x) for each row of ``X``; a single vector gives shape (D,)."""
    single = np.ndim(X) == 1
    phi = _hidden_forward(net, _as_rows(net, X))[-1]
    return phi[0] if single else phi


def _head_loss(out: np.ndarray, y: np.ndarray, loss: str) -> tuple[float, np.ndarray]:
    n = y.size
    if loss == "mse":
        r = out - y
        return float(r @ r) / n, (2.0 / n) * r
    # cross entropy on 0/1 labels with a logistic link
    value = np.mean(np.logaddexp(0.0, out) - y * out)
    p = 0.5 * (1.0 + np.tanh(0.5 * out))
    return float(value), (p - y) / n


def _backward(net: BasisNetwork, acts, g_out: np.ndarray, l2: float):
    kinds = net.config.hidden_activations()
    n_layers = len(net.weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    g = g_out[:, None]
    for i in range(n_layers - 1, -1, -1):
        gW[i] = acts[i].T @ g + (2.0 * l2) * net.weights[i]
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = g @ net.weights[i].T
            h = acts[i]
            g = g * (1.0 - h * h) if kinds[i - 1] == "tanh" else g * (h > 0.0)
    return gW, gb


def loss_and_gradient(net: BasisNetwork, X, y, l2: float, loss: str = "mse"):
    """MAP objective of the head output and its gradient.

    Returns ``(loss, (grad_weights, grad_biases))`` with the same layout as the
    network. The penalty ``l2 * sum ||W||^2`` covers weights only.
    """
    if loss not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}")
    X = _as_rows(net, X)
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0 or y.size != X.shape[0]:
        raise ValueError("batch must be non-empty with one target per row")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in batch")
    acts = _hidden_forward(net, X)
    out = acts[-1] @ net.weights[-1][:, 0] + net.biases[-1][0]
    value, g_out = _head_loss(out, y, loss)
    value += l2 * sum(float(np.sum(W * W)) for W in net.weights)
    return value, _backward(net, acts, g_out, l2)


def momentum_step(param: np.ndarray, velocity: np.ndarray, grad: np.ndarray, lr: float, momentum: float):
    """Classical momentum: v <- momentum*v - lr*g, w <- w + v (in place)."""
    velocity *= momentum
    velocity -= lr * grad
    param += velocity


def train_map(config: NetworkConfig, X, y, seed=None, loss: str = "mse",
              init: Optional[BasisNetwork] = None) -> BasisNetwork:
    """Fit all network parameters by SGD with momentum.

    Datasets no larger than ``config.full_batch_max`` are trained full-batch;
    larger ones use shuffled mini-batches. ``init`` warm-starts from an
    existing network (it is copied, not modified).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training needs at least one observation")
    if X.shape[0] != y.size:
        raise ValueError("X and y disagree in length")
    rng = np.random.default_rng(seed)
    init_seed = rng.integers(2**63)
    net = init.copy() if init is not None else init_params(config, X.shape[1], init_seed)
    net.config = config
    n = X.shape[0]
    lr, mu, l2 = config.learning_rate, config.momentum, config.l2_penalty
    vel_W = [np.zeros_like(W) for W in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]

    def step(Xb, yb):
        acts = _hidden_forward(net, Xb)
        out = acts[-1] @ net.weights[-1][:, 0] + net.biases[-1][0]
        _, g_out = _head_loss(out, yb, loss)
        gW, gb = _backward(net, acts, g_out, l2)
        for i in range(len(net.weights)):
            momentum_step(net.weights[i], vel_W[i], gW[i], lr, mu)
            momentum_step(net.biases[i], vel_b[i], gb[i], lr, mu)

    if n <= config.full_batch_max:
        for _ in range(config.epochs):
            step(X, y)
    else:
        bs = config.batch_size
        updates = 0
        limit = config.max_updates
        for _ in range(config.epochs):
            order = rng.permutation(n)
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                step(X[idx], y[idx])
                updates += 1
                if limit is not None and updates >= limit:
                    break
            if limit is not None and updates >= limit:
                break

    out = net.head(X)
    net.final_loss = _head_loss(out, y, loss)[0]
    if not np.isfinite(net.final_loss):
        raise FloatingPointError("basis network training diverged")
    log.debug("trained basis net on %d points, final %s %.3g", n, loss, net.final_loss)
    return net

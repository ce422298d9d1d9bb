"""Small fully-connected regression network trained with plain mini-batch gradient descent.

Hidden layers use a configurable activation; the output layer is linear. The
loss is mean squared error averaged over batch rows and output columns.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

CHECKPOINT_VERSION = 1

ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class DenseNet:
    layer_sizes: list[int]
    activation: str
    weights: list[np.ndarray]  # weights[i] has shape (layer_sizes[i], layer_sizes[i+1])
    biases: list[np.ndarray]

    @classmethod
    def init(cls, layer_sizes, activation: str = "relu", seed: int = 0) -> "DenseNet":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, activation, weights, biases)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "DenseNet":
        return DenseNet(
            list(self.layer_sizes),
            self.activation,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x.reshape(1, -1) if single else x
        if x2.ndim != 2 or x2.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"expected input width {self.layer_sizes[0]}, got shape {x.shape}")
        return x2, single

    def _forward_cache(self, x: np.ndarray):
        zs, acts = [], [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else _act(self.activation, z)
            zs.append(z)
            acts.append(a)
        return zs, acts

    def forward(self, x) -> np.ndarray:
        x2, single = self._check_input(x)
        out = self._forward_cache(x2)[1][-1]
        return out[0] if single else out

    def loss(self, x, target) -> float:
        out = self.forward(x)
        return float(np.mean((out - np.asarray(target, dtype=np.float64)) ** 2))

    def grad(self, x, target) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Exact backprop gradients of mean((forward(x) - target)**2)."""
        x2, single = self._check_input(x)
        t = np.asarray(target, dtype=np.float64)
        t = t.reshape(1, -1) if single else t
        if t.shape != (x2.shape[0], self.layer_sizes[-1]):
            raise ValueError(f"target shape {t.shape} does not match output {self.layer_sizes[-1]}")
        zs, acts = self._forward_cache(x2)
        delta = 2.0 * (acts[-1] - t) / t.size
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * _act_grad(self.activation, zs[i - 1], acts[i])
        return gw, gb

    # -- flat parameter view, used by checkpoints and finite-difference checks

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos:pos + b.size].copy()
            pos += b.size


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    lr_decay_factor: float = 10.0
    decay_every: int = 0  # 0 disables decay

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if not self.lr_decay_factor > 0:
            raise ValueError("lr_decay_factor must be positive")
        if self.decay_every < 0:
            raise ValueError("decay_every must be non-negative")


@dataclass
class TrainResult:
    net: DenseNet
    loss_history: list[float] = field(default_factory=list)


def train(net: DenseNet, X, Y, cfg: TrainConfig) -> TrainResult:
    """Mini-batch gradient descent with seeded shuffling.

    The input network is left untouched; the trained copy is returned with the
    full-dataset loss recorded after every epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if Y.ndim == 1:
        Y = Y.reshape(1, -1)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(X) != len(Y):
        raise ValueError("inputs and targets differ in length")
    net = net.copy()
    net._check_input(X)
    rng = np.random.default_rng(cfg.seed)
    n = len(X)
    lr = cfg.learning_rate
    history = []
    for epoch in range(cfg.epochs):
        if cfg.decay_every and epoch > 0 and epoch % cfg.decay_every == 0:
            lr /= cfg.lr_decay_factor
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            gw, gb = net.grad(X[idx], Y[idx])
            for i in range(len(net.weights)):
                net.weights[i] -= lr * gw[i]
                net.biases[i] -= lr * gb[i]
        history.append(net.loss(X, Y))
    return TrainResult(net, history)


def net_to_dict(net: DenseNet) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "activation": net.activation,
        "params": [float(v) for v in net.get_flat()],
    }


def net_from_dict(d: dict) -> DenseNet:
    if d.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('format_version')!r}")
    net = DenseNet.init(d["layer_sizes"], d["activation"], seed=0)
    net.set_flat(d["params"])
    return net


def save_checkpoint(path, net: DenseNet, meta: dict | None = None) -> None:
    """Write a JSON checkpoint; float repr makes it exact and byte-stable."""
    doc = net_to_dict(net)
    if meta:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[DenseNet, dict]:
    doc = json.loads(Path(path).read_text())
    return net_from_dict(doc), doc.get("meta", {})


class DenseNetRegressor(BaseEstimator, RegressorMixin):
    """sklearn-compatible wrapper around :class:`DenseNet` training."""

    def __init__(self, hidden_layer_sizes=(16, 64), activation="relu", learning_rate=0.001,
                 epochs=100, batch_size=32, lr_decay_factor=10.0, decay_every=0, seed=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_decay_factor = lr_decay_factor
        self.decay_every = decay_every
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.seed,
                           self.lr_decay_factor, self.decay_every)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y2 = y.reshape(len(y), -1)
        sizes = [X.shape[1], *self.hidden_layer_sizes, y2.shape[1]]
        net = DenseNet.init(sizes, self.activation, self.seed)
        result = train(net, X, y2, self._train_config())
        self.net_ = result.net
        self.loss_curve_ = result.loss_history
        self.n_features_in_ = X.shape[1]
        self._y_1d = y.ndim == 1
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X)
        out = self.net_.forward(X)
        return out[:, 0] if self._y_1d else out

"""Feed-forward network with tanh hidden layers and an element-wise sigmoid head.

Everything is float64 numpy. The loss is element-wise binary cross-entropy
against one-hot targets, summed over output units and averaged over rows;
probabilities are clamped to [1e-7, 1 - 1e-7] and the gradients below are
the exact derivatives of that clamped loss.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import Dataset, one_hot
from .errors import ConfigError, ShapeError, TrainingDivergedError

CLAMP = 1e-7
DEFAULT_HIDDEN = (20, 60, 80, 90)
N_FEATURES = 10


@dataclass(frozen=True)
class MlpArchitecture:
    layer_sizes: tuple[int, ...] = (N_FEATURES,) + DEFAULT_HIDDEN + (2,)
    hidden_activation: str = "tanh"
    output_activation: str = "sigmoid"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ConfigError("an architecture needs at least input and output sizes")
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"layer sizes must be positive, got {sizes}")
        if self.hidden_activation != "tanh" or self.output_activation != "sigmoid":
            raise ConfigError("only tanh hidden and sigmoid output activations are supported")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def reference(cls, n_classes: int) -> "MlpArchitecture":
        """10 -> 20 -> 60 -> 80 -> 90 -> n_classes."""
        if n_classes not in (2, 5):
            raise ConfigError("the reference network has a 2- or 5-unit head")
        return cls((N_FEATURES,) + DEFAULT_HIDDEN + (n_classes,))

    @property
    def activations(self) -> tuple[str, ...]:
        n = len(self.layer_sizes) - 1
        return (self.hidden_activation,) * (n - 1) + (self.output_activation,)


@dataclass(frozen=True)
class MlpModel:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    architecture: MlpArchitecture
    loss_trace: tuple[float, ...] = ()

    def __post_init__(self):
        sizes = self.architecture.layer_sizes
        ws, bs = [], []
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError("one weight matrix and bias vector per layer required")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ShapeError(
                    f"layer {l}: expected W {(sizes[l + 1], sizes[l])}, b ({sizes[l + 1]},); "
                    f"got {w.shape}, {b.shape}"
                )
            w.flags.writeable = False
            b.flags.writeable = False
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def n_inputs(self) -> int:
        return self.architecture.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.architecture.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.architecture.layer_sizes),
            "activations": list(self.architecture.activations),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, d: Mapping) -> "MlpModel":
        acts = d.get("activations")
        arch = MlpArchitecture(tuple(d["layer_sizes"]))
        if acts is not None and tuple(acts) != arch.activations:
            raise ConfigError(f"unsupported activations {acts}")
        return cls(
            tuple(np.asarray(w, dtype=np.float64) for w in d["weights"]),
            tuple(np.asarray(b, dtype=np.float64) for b in d["biases"]),
            arch,
        )

    @classmethod
    def load(cls, path: str | Path) -> "MlpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 512
    learning_rate: float = 0.01
    seed: int = 0
    class_weights: Mapping[int, float] | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.class_weights is not None:
            cw = {int(k): float(v) for k, v in dict(self.class_weights).items()}
            if any(v <= 0 for v in cw.values()):
                raise ConfigError("class weights must be positive")
            object.__setattr__(self, "class_weights", cw)


def init(arch: MlpArchitecture, seed: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(weights), tuple(biases), arch)


def _check_x(m: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.n_inputs:
        raise ShapeError(f"network expects {m.n_inputs} input columns, got shape {x.shape}")
    return x


def _check_y(m: MlpModel, x: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (x.shape[0], m.n_outputs):
        raise ShapeError(f"targets must have shape {(x.shape[0], m.n_outputs)}, got {y.shape}")
    return y


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cache(weights, biases, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    h = x
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T + b
        h = _sigmoid(z) if l == last else np.tanh(z)
        acts.append(h)
    return acts


def forward(m: MlpModel, x) -> np.ndarray:
    x = _check_x(m, x)
    return _forward_cache(m.weights, m.biases, x)[-1]


def _row_weights(y: np.ndarray, class_weights: Mapping[int, float] | None) -> np.ndarray | None:
    if class_weights is None:
        return None
    table = np.array([class_weights.get(k, 1.0) for k in range(y.shape[1])])
    return table[np.argmax(y, axis=1)]


def _bce_rows(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    return -np.sum(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc), axis=1)


def loss(m: MlpModel, x, y_onehot, class_weights: Mapping[int, float] | None = None) -> float:
    x = _check_x(m, x)
    y = _check_y(m, x, y_onehot)
    rows = _bce_rows(forward(m, x), y)
    rw = _row_weights(y, class_weights)
    if rw is not None:
        rows = rows * rw
    return float(rows.mean())


def _backward(weights, biases, x: np.ndarray, y: np.ndarray, class_weights=None):
    """Gradients of :func:`loss` w.r.t. every parameter and the input."""
    acts = _forward_cache(weights, biases, x)
    p = acts[-1]
    n = x.shape[0]
    inside = (p > CLAMP) & (p < 1.0 - CLAMP)
    # d/dz of the clamped BCE through the sigmoid; zero where the clamp is active
    delta = np.where(inside, p - y, 0.0) / n
    rw = _row_weights(y, class_weights)
    if rw is not None:
        delta = delta * rw[:, None]
    grads_w: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    for l in range(len(weights) - 1, -1, -1):
        grads_w[l] = delta.T @ acts[l]
        grads_b[l] = delta.sum(axis=0)
        back = delta @ weights[l]
        if l > 0:
            delta = back * (1.0 - acts[l] ** 2)
    return grads_w, grads_b, back


def parameter_gradients(m: MlpModel, x, y_onehot, class_weights=None):
    """``(dW, db)`` lists matching ``m.weights`` / ``m.biases``."""
    x = _check_x(m, x)
    y = _check_y(m, x, y_onehot)
    gw, gb, _ = _backward(m.weights, m.biases, x, y, class_weights)
    return gw, gb


def input_gradient(m: MlpModel, x, y_onehot) -> np.ndarray:
    """Gradient of the mean loss with respect to each input row.

    The mean-over-rows factor only rescales each row's gradient by 1/n, so
    its sign (what FGSM uses) is the same as that of the per-row loss.
    """
    x = _check_x(m, x)
    y = _check_y(m, x, y_onehot)
    return _backward(m.weights, m.biases, x, y)[2]


def predict(m: MlpModel, x) -> np.ndarray:
    # argmax returns the first maximum, i.e. lowest class index on ties
    return np.argmax(forward(m, x), axis=1)


def train(
    m: MlpModel, ds: Dataset, cfg: TrainConfig = TrainConfig(), task: str | None = None
) -> MlpModel:
    """Mini-batch gradient descent; returns a new model carrying the epoch loss trace.

    ``task`` selects the label vector; by default it follows the head width
    (2 units: binary attack label, otherwise the five categories).
    """
    if task is None:
        task = "binary" if m.n_outputs == 2 else "multiclass"
    x = _check_x(m, ds.features)
    y = one_hot(ds.labels(task), m.n_outputs)
    n = x.shape[0]
    if cfg.batch_size > n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds dataset rows {n}")
    rng = np.random.default_rng(cfg.seed)
    weights = [w.copy() for w in m.weights]
    biases = [b.copy() for b in m.biases]
    arch = m.architecture
    trace: list[float] = []
    lr = cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            gw, gb, _ = _backward(weights, biases, x[idx], y[idx], cfg.class_weights)
            for l in range(len(weights)):
                weights[l] = weights[l] - lr * gw[l]
                biases[l] = biases[l] - lr * gb[l]
        rows = _bce_rows(_forward_cache(weights, biases, x)[-1], y)
        rw = _row_weights(y, cfg.class_weights)
        epoch_loss = float((rows if rw is None else rows * rw).mean())
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        trace.append(epoch_loss)
    return MlpModel(tuple(weights), tuple(biases), arch, tuple(m.loss_trace) + tuple(trace))

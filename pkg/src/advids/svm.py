"""Linear SVM trained by deterministic primal subgradient descent.

Objective, with labels mapped to y in {-1, +1}::

    F(w, b) = 1/2 ||w||^2 + C * sum_i s_i * max(0, 1 - y_i (w.x_i + b))

Training alternates two steps per epoch. The weights take Pegasos-style
mini-batch subgradient steps over the rows in a seeded random order, with
step 1/(lam * (t + 1)), lam = 1/(C n), t counting updates. The bias, which
is not regularised, is then set to its exact minimiser for the current
weights. The iterate with the lowest objective seen at an epoch boundary is
kept, so the recorded objective trace never increases.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import Dataset
from .errors import (
    ConfigError,
    DegenerateModelError,
    DegenerateTrainingError,
    FoldingError,
    ShapeError,
)
from .metrics import ConfusionMatrix, MetricsReport, compute_metrics, confusion


@dataclass(frozen=True)
class SvmTrainConfig:
    penalty_C: float = 1.0
    max_iterations: int = 100_000
    tolerance: float = 1e-4
    seed: int = 0
    class_weights: Mapping[int, float] | None = None
    batch_size: int = 64
    # epochs over which the relative objective decrease is measured
    patience: int = 10

    def __post_init__(self):
        if self.penalty_C <= 0:
            raise ConfigError("penalty_C must be > 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be positive")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be > 0")
        if self.batch_size < 1 or self.patience < 1:
            raise ConfigError("batch_size and patience must be positive")
        if self.class_weights is not None:
            cw = {int(k): float(v) for k, v in dict(self.class_weights).items()}
            if any(v <= 0 for v in cw.values()):
                raise ConfigError("class weights must be positive")
            object.__setattr__(self, "class_weights", cw)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["class_weights"] is not None:
            d["class_weights"] = {str(k): v for k, v in d["class_weights"].items()}
        return d


@dataclass(frozen=True)
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    train_iterations_used: int = 0
    converged: bool = False
    objective_trace: tuple[float, ...] = ()
    config: SvmTrainConfig | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1).copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "config": None if self.config is None else self.config.to_dict(),
            "converged": self.converged,
            "train_iterations_used": self.train_iterations_used,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearSvmModel":
        cfg = d.get("config")
        if cfg is not None:
            cfg = dict(cfg)
            if cfg.get("class_weights") is not None:
                cfg["class_weights"] = {int(k): v for k, v in cfg["class_weights"].items()}
            cfg = SvmTrainConfig(**cfg)
        return cls(
            np.asarray(d["weights"], dtype=np.float64),
            d["bias"],
            int(d.get("train_iterations_used", 0)),
            bool(d.get("converged", False)),
            config=cfg,
        )

    @classmethod
    def load(cls, path: str | Path) -> "LinearSvmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MarginRanking:
    indices: np.ndarray
    distances: np.ndarray


def _signed(labels: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(labels) == 1, 1.0, -1.0)


def _sample_weights(y01: np.ndarray, class_weights: Mapping[int, float] | None) -> np.ndarray | None:
    if class_weights is None:
        return None
    raw = np.array([class_weights.get(int(c), 1.0) for c in (0, 1)])
    # normalised to the largest weight so equal weights reduce to exactly 1.0
    raw = raw / raw.max()
    if np.all(raw == 1.0):
        return None
    return raw[y01]


def hinge_objective(
    w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, C: float, s: np.ndarray | None = None
) -> float:
    """Primal objective for signed labels ``y``."""
    slack = np.maximum(0.0, 1.0 - y * (x @ w + b))
    if s is not None:
        slack = slack * s
    return 0.5 * float(w @ w) + C * float(slack.sum())


def optimal_bias(
    margins: np.ndarray, y: np.ndarray, s: np.ndarray | None = None
) -> float:
    """argmin_b of sum_i s_i * max(0, 1 - y_i (margins_i + b)).

    Each term is piecewise linear with a kink at b = y_i - margins_i. The
    slope starts at -(weight of positives) and every kink raises it by that
    row's weight, so the minimiser is the first kink where the running
    weight reaches the positive total (a weighted median).
    """
    weights = np.ones_like(y) if s is None else s
    kinks = y - margins
    order = np.argsort(kinks, kind="stable")
    need = weights[y > 0].sum()
    if need == 0:
        return float(kinks.min()) if kinks.size else 0.0
    cum = np.cumsum(weights[order])
    pos = int(np.searchsorted(cum, need - 1e-12 * need))
    return float(kinks[order[min(pos, order.size - 1)]])


def train_svm(ds: Dataset, cfg: SvmTrainConfig = SvmTrainConfig()) -> LinearSvmModel:
    """Fit a linear SVM on ``ds.binary_labels`` (1 = attack)."""
    x = ds.features
    y01 = ds.binary_labels
    n, d = x.shape
    if n == 0 or np.unique(y01).size < 2:
        raise DegenerateTrainingError("linear SVM training needs both classes present")
    y = _signed(y01)
    s = _sample_weights(y01, cfg.class_weights)
    C = cfg.penalty_C
    lam = 1.0 / (C * n)
    radius = math.sqrt(2.0 / lam)  # ||w*|| bound implied by F(w*) <= F(0)
    rng = np.random.default_rng(cfg.seed)
    bs = min(cfg.batch_size, n)

    w = np.zeros(d)
    b = optimal_bias(np.zeros(n), y, s)
    best_w, best_b = w.copy(), b
    best_obj = hinge_objective(w, b, x, y, C, s)
    trace = [best_obj]
    t = 0
    converged = False
    epochs = 0
    for epochs in range(1, cfg.max_iterations + 1):
        order = rng.permutation(n)
        w_sum = np.zeros(d)
        steps = 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            xb, yb = x[idx], y[idx]
            viol = yb * (xb @ w + b) < 1.0
            eta = 1.0 / (lam * (t + 1))
            coef = yb[viol] if s is None else yb[viol] * s[idx][viol]
            # subgradient of lam/2 ||w||^2 + mean hinge over the batch
            w = (1.0 - eta * lam) * w + (eta / idx.shape[0]) * (coef @ xb[viol])
            norm = math.sqrt(float(w @ w))
            if norm > radius:
                w *= radius / norm
            w_sum += w
            t += 1
            steps += 1
        b = optimal_bias(x @ w, y, s)
        # candidates: last iterate and the average over this epoch's iterates
        w_avg = w_sum / steps
        for cw, cb in ((w, b), (w_avg, optimal_bias(x @ w_avg, y, s))):
            obj = hinge_objective(cw, cb, x, y, C, s)
            if obj < best_obj:
                best_obj, best_w, best_b = obj, cw.copy(), cb
        trace.append(best_obj)
        if epochs > cfg.patience:
            prev = trace[-1 - cfg.patience]
            if prev - best_obj <= cfg.tolerance * max(1.0, abs(prev)):
                converged = True
                break
    return LinearSvmModel(best_w, best_b, epochs, converged, tuple(trace), cfg)


def decision_values(m: LinearSvmModel, ds: Dataset | np.ndarray) -> np.ndarray:
    x = ds.features if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.weights.shape[0]:
        raise ShapeError(f"model expects {m.weights.shape[0]} features, got shape {x.shape}")
    return x @ m.weights + m.bias


def predict(m: LinearSvmModel, ds: Dataset | np.ndarray) -> np.ndarray:
    return (decision_values(m, ds) >= 0).astype(np.int64)


def margin_ranking(m: LinearSvmModel, ds: Dataset | np.ndarray) -> MarginRanking:
    """Rows ordered by geometric distance to the hyperplane, nearest first."""
    norm = m.norm
    if norm == 0:
        raise DegenerateModelError("zero weight vector has no hyperplane")
    dist = np.abs(decision_values(m, ds)) / norm
    order = np.argsort(dist, kind="stable")
    return MarginRanking(order, dist[order])


def evaluate(m: LinearSvmModel, ds: Dataset) -> tuple[MetricsReport, ConfusionMatrix]:
    cm = confusion(ds.binary_labels, predict(m, ds), 2, ("benign", "attack"))
    return compute_metrics(cm), cm


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per row: classes are shuffled separately then dealt round-robin."""
    rng = np.random.default_rng(seed)
    n = labels.shape[0]
    dealt = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[dealt] = np.arange(n) % folds
    return fold_of


def _threads() -> int:
    try:
        return max(0, int(os.environ.get("ADVIDS_THREADS", "0")))
    except ValueError:
        return 0


def cross_validate(
    ds: Dataset, cfg: SvmTrainConfig = SvmTrainConfig(), folds: int = 4
) -> list[MetricsReport]:
    """Stratified k-fold: one report per held-out fold, in fold order."""
    if folds < 2:
        raise ConfigError("folds must be >= 2")
    y = ds.binary_labels
    fold_of = stratified_folds(y, folds, cfg.seed)
    for f in range(folds):
        held = y[fold_of == f]
        rest = y[fold_of != f]
        if np.unique(held).size < 2 or np.unique(rest).size < 2:
            raise FoldingError(f"fold {f} is missing a class; too few rows of the minority class")
    seeds = np.random.SeedSequence(cfg.seed).generate_state(folds)

    def run(f: int) -> MetricsReport:
        fold_cfg = SvmTrainConfig(**{**cfg.__dict__, "seed": int(seeds[f])})
        model = train_svm(ds.subset(np.flatnonzero(fold_of != f)), fold_cfg)
        return evaluate(model, ds.subset(np.flatnonzero(fold_of == f)))[0]

    workers = _threads()
    if workers:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, range(folds)))
    return [run(f) for f in range(folds)]

"""Label-flip poisoning of SVM training data and FGSM evasion of MLPs."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mlp as _mlp
from .data import Dataset, one_hot
from .errors import ConfigError, LineageError
from .svm import LinearSvmModel, margin_ranking

FLIP_GRID: tuple[float, ...] = tuple(round(0.05 * i, 10) for i in range(1, 11))
EPSILON_GRID: tuple[float, ...] = tuple(round(0.1 * i, 10) for i in range(11))


@dataclass(frozen=True)
class LabelFlipSpec:
    mode: str = "random"
    fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random", "targeted"):
            raise ConfigError(f"flip mode must be 'random' or 'targeted', got {self.mode!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError(f"flip fraction must lie in [0, 1], got {self.fraction}")


@dataclass(frozen=True)
class FlipRecord:
    flipped_indices: np.ndarray
    original_labels: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.flipped_indices, dtype=np.int64).reshape(-1)
        lab = np.asarray(self.original_labels, dtype=np.int64).reshape(-1)
        if idx.shape != lab.shape:
            raise LineageError("flip record indices and labels differ in length")
        if np.unique(idx).size != idx.size:
            raise LineageError("flip record has duplicate indices")
        order = np.argsort(idx, kind="stable")
        idx, lab = idx[order], lab[order]
        idx.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "flipped_indices", idx)
        object.__setattr__(self, "original_labels", lab)

    def __len__(self) -> int:
        return self.flipped_indices.shape[0]

    def to_dict(self) -> dict:
        return {
            "flipped_indices": self.flipped_indices.tolist(),
            "original_labels": self.original_labels.tolist(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, d) -> "FlipRecord":
        return cls(np.asarray(d["flipped_indices"]), np.asarray(d["original_labels"]))


def flip_count(fraction: float, n_rows: int) -> int:
    """floor(fraction * n_rows), guarded against products like 0.29*100 = 28.999..."""
    return int(math.floor(round(fraction * n_rows, 9)))


def _xor_flip(ds: Dataset, indices: np.ndarray) -> tuple[Dataset, FlipRecord]:
    labels = ds.binary_labels.copy()
    record = FlipRecord(indices, labels[indices])
    labels[indices] ^= 1
    return ds.with_binary_labels(labels), record


def random_flip(ds: Dataset, spec: LabelFlipSpec) -> tuple[Dataset, FlipRecord]:
    """XOR-flip the binary labels of a uniform sample of floor(fraction*n) rows."""
    if spec.mode != "random":
        raise ConfigError("random_flip needs mode='random'")
    n = len(ds)
    k = flip_count(spec.fraction, n)
    rng = np.random.default_rng(spec.seed)
    chosen = np.sort(rng.choice(n, size=k, replace=False)) if k else np.empty(0, np.int64)
    return _xor_flip(ds, chosen)


def targeted_flip(
    ds: Dataset, model: LinearSvmModel, spec: LabelFlipSpec
) -> tuple[Dataset, FlipRecord]:
    """Flip the floor(fraction*n) rows lying closest to the clean model's hyperplane."""
    if spec.mode != "targeted":
        raise ConfigError("targeted_flip needs mode='targeted'")
    ranking = margin_ranking(model, ds)
    k = flip_count(spec.fraction, len(ds))
    return _xor_flip(ds, np.sort(ranking.indices[:k]))


def flip(ds: Dataset, spec: LabelFlipSpec, model: LinearSvmModel | None = None):
    if spec.mode == "random":
        return random_flip(ds, spec)
    if model is None:
        raise ConfigError("targeted flipping needs the clean SVM model")
    return targeted_flip(ds, model, spec)


def flip_revert(ds: Dataset, rec: FlipRecord) -> Dataset:
    idx = rec.flipped_indices
    if idx.size and (idx.min() < 0 or idx.max() >= len(ds)):
        raise LineageError(f"flip record index out of range for {len(ds)} rows")
    labels = ds.binary_labels.copy()
    labels[idx] = rec.original_labels
    return ds.with_binary_labels(labels)


@dataclass(frozen=True)
class FgsmSpec:
    epsilon: float = 0.1
    targeted: bool = False
    target_class: int | None = 0
    clip_range: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.clip_range is not None:
            lo, hi = (float(v) for v in self.clip_range)
            if lo > hi:
                raise ConfigError("clip_range lower bound exceeds upper bound")
            object.__setattr__(self, "clip_range", (lo, hi))


def fgsm(
    model: _mlp.MlpModel, x, y_reference=None, spec: FgsmSpec = FgsmSpec()
) -> np.ndarray:
    """One-step fast gradient sign perturbation of the rows of ``x``.

    Non-targeted: step up the loss of the true labels ``y_reference``
    (model predictions when omitted). Targeted: step down the loss of the
    target, taken from ``spec.target_class`` or else from per-row one-hot
    ``y_reference``. ``sign(0) = 0``, so coordinates with no gradient stay
    put. Clipping, if configured, is applied after the step.
    """
    x = np.asarray(x, dtype=np.float64)
    if spec.epsilon == 0.0:
        return x.copy()
    k = model.n_outputs
    if spec.targeted:
        if spec.target_class is not None:
            if not 0 <= spec.target_class < k:
                raise ConfigError(f"target_class {spec.target_class} outside [0, {k})")
            y = one_hot(np.full(x.shape[0], spec.target_class), k)
        elif y_reference is not None:
            y = np.asarray(y_reference, dtype=np.float64)
        else:
            raise ConfigError("targeted FGSM needs target_class or per-row target labels")
        direction = -1.0
    else:
        y = one_hot(_mlp.predict(model, x), k) if y_reference is None else np.asarray(y_reference, dtype=np.float64)
        direction = 1.0
    grad = _mlp.input_gradient(model, x, y)
    x_adv = x + (direction * spec.epsilon) * np.sign(grad)
    if spec.clip_range is not None:
        x_adv = np.clip(x_adv, *spec.clip_range)
    return x_adv

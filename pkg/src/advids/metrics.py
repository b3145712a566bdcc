"""Confusion matrices, detection-rate metrics and ROC/AUC.

Binary matrices treat class 1 as the attack (positive) class. Rates are
computed from Python integers so numerators and denominators are exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInputError, ShapeError, UndefinedCurveError

METRIC_FIELDS: tuple[str, ...] = (
    "accuracy",
    "tpr",
    "tnr",
    "fpr",
    "fnr",
    "precision",
    "recall",
    "f1",
)
REPORT_FIELDS: tuple[str, ...] = METRIC_FIELDS + ("loss", "averaging")


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("confusion counts must be nonnegative")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)
        names = tuple(self.class_names) or tuple(str(i) for i in range(c.shape[0]))
        if len(names) != c.shape[0]:
            raise ShapeError("class_names length differs from matrix size")
        object.__setattr__(self, "class_names", names)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _binary(self):
        if self.k != 2:
            raise ShapeError("TP/TN/FP/FN are defined for 2x2 matrices only")
        c = self.counts
        return int(c[1, 1]), int(c[0, 0]), int(c[0, 1]), int(c[1, 0])

    @property
    def tp(self) -> int:
        return self._binary()[0]

    @property
    def tn(self) -> int:
        return self._binary()[1]

    @property
    def fp(self) -> int:
        return self._binary()[2]

    @property
    def fn(self) -> int:
        return self._binary()[3]

    def one_vs_rest(self, cls: int) -> tuple[int, int, int, int]:
        """(tp, tn, fp, fn) with ``cls`` as the positive class."""
        c = self.counts
        tp = int(c[cls, cls])
        fp = int(c[:, cls].sum()) - tp
        fn = int(c[cls, :].sum()) - tp
        tn = self.total - tp - fp - fn
        return tp, tn, fp, fn

    def to_dict(self) -> dict:
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d) -> "ConfusionMatrix":
        return cls(np.asarray(d["counts"]), tuple(d["class_names"]))


def confusion(true_labels, predicted, k: int, class_names: Sequence[str] = ()) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ShapeError(f"{t.shape[0]} true labels vs {p.shape[0]} predictions")
    for name, v in (("true", t), ("predicted", p)):
        if v.size and (v.min() < 0 or v.max() >= k):
            raise ValueError(f"{name} labels must lie in [0, {k})")
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, tuple(class_names))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    tpr: float
    tnr: float
    fpr: float
    fnr: float
    precision: float
    recall: float
    f1: float
    averaging: str = "binary"
    loss: float | None = None
    # names of metrics whose denominator was zero and were reported as 0
    flags: tuple[str, ...] = ()

    def with_loss(self, loss: float | None) -> "MetricsReport":
        return MetricsReport(**{**self.__dict__, "loss": None if loss is None else float(loss)})

    def to_dict(self) -> dict:
        """Flat serialisation with exactly the public report fields."""
        return {name: getattr(self, name) for name in REPORT_FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        kwargs = {name: float(d[name]) for name in METRIC_FIELDS}
        loss = d.get("loss")
        return cls(
            **kwargs,
            averaging=str(d.get("averaging", "binary")),
            loss=None if loss in (None, "") else float(loss),
            flags=tuple(d.get("flags", ())),
        )


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def _rates(tp: int, tn: int, fp: int, fn: int, flags: list[str], suffix: str = "") -> dict:
    precision = _ratio(tp, tp + fp, "precision" + suffix, flags)
    tpr = _ratio(tp, tp + fn, "tpr" + suffix, flags)
    return {
        "tpr": tpr,
        "tnr": _ratio(tn, tn + fp, "tnr" + suffix, flags),
        "fpr": _ratio(fp, fp + tn, "fpr" + suffix, flags),
        "fnr": _ratio(fn, fn + tp, "fnr" + suffix, flags),
        "precision": precision,
        "recall": tpr,
        "f1": _f1(precision, tpr),
    }


def compute_metrics(
    cm: ConfusionMatrix, averaging: str | None = None, loss: float | None = None
) -> MetricsReport:
    """Rates, precision, recall and F1 from a confusion matrix.

    ``averaging`` defaults to ``"binary"`` for 2x2 matrices and ``"macro"``
    otherwise. Macro mode computes one-vs-rest rates per class and takes the
    unweighted mean; F1 is computed per class before averaging. ``"micro"``
    pools the one-vs-rest counts of every class.
    """
    total = cm.total
    if total == 0:
        raise EmptyInputError("confusion matrix is empty")
    if averaging is None:
        averaging = "binary" if cm.k == 2 else "macro"
    accuracy = int(np.trace(cm.counts)) / total
    flags: list[str] = []

    if averaging == "binary":
        if cm.k != 2:
            raise ShapeError("binary averaging needs a 2x2 matrix")
        r = _rates(cm.tp, cm.tn, cm.fp, cm.fn, flags)
    elif averaging == "macro":
        per_class = [_rates(*cm.one_vs_rest(c), flags, suffix=f"[{c}]") for c in range(cm.k)]
        r = {key: math.fsum(pc[key] for pc in per_class) / cm.k for key in per_class[0]}
    elif averaging == "micro":
        sums = [0, 0, 0, 0]
        for c in range(cm.k):
            sums = [a + b for a, b in zip(sums, cm.one_vs_rest(c))]
        r = _rates(*sums, flags)
    else:
        raise ValueError(f"unknown averaging mode {averaging!r}")

    return MetricsReport(
        accuracy=accuracy,
        averaging=averaging,
        loss=None if loss is None else float(loss),
        flags=tuple(flags),
        **r,
    )


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_auc(scores, true_labels) -> RocCurve:
    """Threshold sweep over the unique scores, bracketed by +inf and -inf.

    A row is predicted positive when its score is >= the threshold, so equal
    scores move together and a tie contributes half a pair to the AUC.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(true_labels).reshape(-1)
    if s.shape != y.shape:
        raise ShapeError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int(y.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedCurveError("ROC needs at least one positive and one negative label")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    pos_sorted = pos[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.diff(s_sorted) != 0)
    ends = np.append(ends, s_sorted.shape[0] - 1)
    tp = np.cumsum(pos_sorted)[ends]
    fp = (ends + 1) - tp

    tpr = np.concatenate([[0.0], tp / n_pos, [1.0]])
    fpr = np.concatenate([[0.0], fp / n_neg, [1.0]])
    thresholds = np.concatenate([[np.inf], s_sorted[ends], [-np.inf]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)

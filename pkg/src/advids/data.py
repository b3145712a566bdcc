"""Bot-IoT ingestion, preprocessing and synthetic stand-in data.

The model only ever sees the ten top-ranked Bot-IoT features. Flow
identifiers, the row identifier and the subcategory column are accepted in
input files but dropped on load.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ConfigError,
    EmptyInputError,
    ParseError,
    SchemaError,
    ShapeError,
    UnknownCategoryError,
)

logger = logging.getLogger(__name__)

TOP10_FEATURES: tuple[str, ...] = (
    "seq",
    "stddev",
    "N_IN_Conn_P_SrcIP",
    "min",
    "state_number",
    "mean",
    "N_IN_Conn_P_DstIP",
    "drate",
    "srate",
    "max",
)
FLOW_IDENTIFIERS: tuple[str, ...] = ("proto", "saddr", "sport", "daddr", "dport")
ROW_IDENTIFIER = "pkSeqID"
BINARY_LABEL = "attack"
CATEGORY_LABEL = "category"
SUBCATEGORY_LABEL = "subcategory"

# Fixed encoding, independent of file order or alphabetical order.
CATEGORIES: tuple[str, ...] = ("Normal", "Reconnaissance", "DDoS", "DoS", "Theft")
CATEGORY_INDEX: dict[str, int] = {name: i for i, name in enumerate(CATEGORIES)}
NORMAL = 0

# Bot-IoT category counts of the 5% extract.
BOT_IOT_5PCT_COUNTS: dict[str, int] = {
    "DDoS": 1_926_624,
    "DoS": 1_650_260,
    "Normal": 477,
    "Reconnaissance": 91_082,
    "Theft": 79,
}
BOT_IOT_5PCT_TRAIN_ROWS = 2_934_817
BOT_IOT_5PCT_TEST_ROWS = 733_705

_BINARY_TOKENS = {"0": 0, "1": 1, "0.0": 0, "1.0": 1, "false": 0, "true": 1}


class Role(str, Enum):
    FEATURE = "feature"
    FLOW_IDENTIFIER = "flow_identifier"
    ROW_IDENTIFIER = "row_identifier"
    LABEL_BINARY = "label_binary"
    LABEL_CATEGORY = "label_category"
    LABEL_SUBCATEGORY = "label_subcategory"


_DROPPED = {Role.FLOW_IDENTIFIER, Role.ROW_IDENTIFIER, Role.LABEL_SUBCATEGORY}


@dataclass(frozen=True)
class ColumnSchema:
    names: tuple[str, ...]
    roles: Mapping[str, Role]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "roles", {k: Role(v) for k, v in self.roles.items()})
        if len(set(self.names)) != len(self.names):
            raise SchemaError("duplicate column names in schema")
        if set(self.names) != set(self.roles):
            raise SchemaError("every schema column needs exactly one role")
        by_role = {r: [n for n in self.names if self.roles[n] is r] for r in Role}
        if len(by_role[Role.ROW_IDENTIFIER]) > 1:
            raise SchemaError("at most one row_identifier column allowed")
        if tuple(sorted(by_role[Role.FEATURE])) != tuple(sorted(TOP10_FEATURES)):
            raise SchemaError("feature columns must be exactly the Bot-IoT top-10 features")
        flows = set(by_role[Role.FLOW_IDENTIFIER])
        if flows and flows != set(FLOW_IDENTIFIERS):
            raise SchemaError(f"flow identifiers must be exactly {sorted(FLOW_IDENTIFIERS)}")
        for role in (Role.LABEL_BINARY, Role.LABEL_CATEGORY):
            if len(by_role[role]) != 1:
                raise SchemaError(f"schema needs exactly one {role.value} column")

    @classmethod
    def bot_iot(cls) -> "ColumnSchema":
        """The 19-column layout of the released Bot-IoT 5% training/testing files."""
        names = (
            (ROW_IDENTIFIER,)
            + FLOW_IDENTIFIERS
            + TOP10_FEATURES
            + (BINARY_LABEL, CATEGORY_LABEL, SUBCATEGORY_LABEL)
        )
        roles = {ROW_IDENTIFIER: Role.ROW_IDENTIFIER}
        roles.update({n: Role.FLOW_IDENTIFIER for n in FLOW_IDENTIFIERS})
        roles.update({n: Role.FEATURE for n in TOP10_FEATURES})
        roles[BINARY_LABEL] = Role.LABEL_BINARY
        roles[CATEGORY_LABEL] = Role.LABEL_CATEGORY
        roles[SUBCATEGORY_LABEL] = Role.LABEL_SUBCATEGORY
        return cls(names, roles)

    @classmethod
    def canonical(cls) -> "ColumnSchema":
        """Features plus both label columns, as written by :func:`save_csv`."""
        names = TOP10_FEATURES + (BINARY_LABEL, CATEGORY_LABEL)
        roles = {n: Role.FEATURE for n in TOP10_FEATURES}
        roles[BINARY_LABEL] = Role.LABEL_BINARY
        roles[CATEGORY_LABEL] = Role.LABEL_CATEGORY
        return cls(names, roles)

    def column_for(self, role: Role) -> str:
        return next(n for n in self.names if self.roles[n] is role)


@dataclass(frozen=True, eq=False)
class ScalingState:
    mins: np.ndarray
    maxs: np.ndarray
    target: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        mins = _frozen(np.asarray(self.mins, dtype=np.float64))
        maxs = _frozen(np.asarray(self.maxs, dtype=np.float64))
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ShapeError("mins and maxs must be 1-D and of equal length")
        if np.any(mins > maxs):
            raise ConfigError("scaling state has min > max")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        object.__setattr__(self, "target", tuple(float(t) for t in self.target))

    @property
    def n_features(self) -> int:
        return self.mins.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeError(
                f"expected {self.n_features} feature columns, got shape {x.shape}"
            )
        lo, hi = self.target
        span = self.maxs - self.mins
        const = span == 0
        safe = np.where(const, 1.0, span)
        out = (hi - lo) * (x - self.mins) / safe + lo
        # constant columns carry no information; map to the range midpoint
        out[:, const] = (lo + hi) / 2.0
        return out

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} columns, got shape {z.shape}")
        lo, hi = self.target
        return (z - lo) / (hi - lo) * (self.maxs - self.mins) + self.mins

    def out_of_range_count(self, scaled: np.ndarray) -> int:
        lo, hi = self.target
        return int(np.count_nonzero((scaled < lo) | (scaled > hi)))

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist(), "target": list(self.target)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScalingState":
        return cls(np.asarray(d["mins"]), np.asarray(d["maxs"]), tuple(d.get("target", (-1.0, 1.0))))


@dataclass(frozen=True)
class Dataset:
    """Dense feature matrix with binary and five-class labels.

    Arrays are stored read-only; derive new datasets instead of mutating.
    ``binary_labels`` may disagree with ``category_labels`` once labels have
    been poisoned, so that invariant is checked by :meth:`check_labels`
    rather than on construction.
    """

    features: np.ndarray
    binary_labels: np.ndarray
    category_labels: np.ndarray
    scaling: ScalingState | None = None
    feature_names: tuple[str, ...] = TOP10_FEATURES

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {x.shape}")
        yb = np.asarray(self.binary_labels, dtype=np.int64).reshape(-1)
        yc = np.asarray(self.category_labels, dtype=np.int64).reshape(-1)
        if yb.shape[0] != x.shape[0] or yc.shape[0] != x.shape[0]:
            raise ShapeError(
                f"{x.shape[0]} feature rows but {yb.shape[0]} binary and "
                f"{yc.shape[0]} category labels"
            )
        if len(self.feature_names) != x.shape[1]:
            raise ShapeError("feature_names length differs from feature column count")
        if np.any((yb != 0) & (yb != 1)):
            raise ValueError("binary labels must be 0 or 1")
        if np.any((yc < 0) | (yc >= len(CATEGORIES))):
            raise ValueError("category labels must lie in [0, 5)")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "binary_labels", _frozen(yb))
        object.__setattr__(self, "category_labels", _frozen(yc))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def labels(self, task: str = "binary") -> np.ndarray:
        if task == "binary":
            return self.binary_labels
        if task in ("multiclass", "category"):
            return self.category_labels
        raise ConfigError(f"unknown task {task!r}; expected 'binary' or 'multiclass'")

    def check_labels(self) -> None:
        """Raise if any binary label disagrees with its category."""
        bad = np.flatnonzero(self.binary_labels != (self.category_labels != NORMAL))
        if bad.size:
            raise ValueError(
                f"row {int(bad[0])}: attack label {int(self.binary_labels[bad[0]])} "
                f"inconsistent with category {CATEGORIES[self.category_labels[bad[0]]]}"
            )

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.binary_labels[idx],
            self.category_labels[idx],
            self.scaling,
            self.feature_names,
        )

    def with_binary_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.features, labels, self.category_labels, self.scaling, self.feature_names)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.binary_labels, self.category_labels, self.scaling, self.feature_names)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.features, self.binary_labels, self.category_labels):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def concat(a: Dataset, b: Dataset) -> Dataset:
    if a.feature_names != b.feature_names:
        raise ShapeError("datasets have different feature columns")
    return Dataset(
        np.vstack([a.features, b.features]),
        np.concatenate([a.binary_labels, b.binary_labels]),
        np.concatenate([a.category_labels, b.category_labels]),
        a.scaling,
        a.feature_names,
    )


def _frozen(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


# --------------------------------------------------------------------------- CSV


def load_csv(
    path: str | Path, schema: ColumnSchema | None = None, check_labels: bool = True
) -> Dataset:
    """Read a Bot-IoT style CSV into an unscaled :class:`Dataset`.

    When ``schema`` is omitted it is inferred from the header: files carrying
    ``pkSeqID`` use the full Bot-IoT layout, anything else the canonical
    features-plus-labels layout. Either way the header must match the schema
    exactly (column order is free).

    Row numbers in error messages are 1-based file line numbers.
    """
    path = Path(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    header = [c.strip() for c in df.columns]
    df.columns = header
    if schema is None:
        schema = ColumnSchema.bot_iot() if ROW_IDENTIFIER in header else ColumnSchema.canonical()

    missing = [n for n in schema.names if n not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")
    extra = [n for n in header if n not in schema.roles]
    if extra:
        raise SchemaError(f"{path}: unexpected column(s): {', '.join(extra)}")
    if len(df) == 0:
        raise EmptyInputError(f"{path}: no data rows")

    features = np.empty((len(df), len(TOP10_FEATURES)), dtype=np.float64)
    for j, name in enumerate(TOP10_FEATURES):
        raw = df[name].str.strip()
        values = pd.to_numeric(raw, errors="coerce")
        bad = np.flatnonzero(values.isna().to_numpy() | ~np.isfinite(values.to_numpy(dtype=float)))
        if bad.size:
            i = int(bad[0])
            raise ParseError(
                f"{path}: line {i + 2}, column {name!r}: cannot parse {df[name].iloc[i]!r} as a number",
                row=i + 2,
                column=name,
            )
        # pandas' fast parser is not correctly rounded; numpy's is
        features[:, j] = raw.to_numpy().astype(np.float64)

    attack_col = schema.column_for(Role.LABEL_BINARY)
    tokens = df[attack_col].str.strip().str.lower()
    binary = tokens.map(_BINARY_TOKENS)
    bad = np.flatnonzero(binary.isna().to_numpy())
    if bad.size:
        i = int(bad[0])
        raise ParseError(
            f"{path}: line {i + 2}, column {attack_col!r}: expected 0/1, got {df[attack_col].iloc[i]!r}",
            row=i + 2,
            column=attack_col,
        )

    cat_col = schema.column_for(Role.LABEL_CATEGORY)
    cats = df[cat_col].str.strip().map(CATEGORY_INDEX)
    bad = np.flatnonzero(cats.isna().to_numpy())
    if bad.size:
        i = int(bad[0])
        raise UnknownCategoryError(
            f"{path}: line {i + 2}: unknown category {df[cat_col].iloc[i]!r}; "
            f"expected one of {', '.join(CATEGORIES)}"
        )

    ds = Dataset(features, binary.to_numpy(dtype=np.int64), cats.to_numpy(dtype=np.int64))
    if check_labels:
        ds.check_labels()
    return ds


def save_csv(ds: Dataset, path: str | Path) -> Path:
    """Write the canonical dump: feature columns, ``attack`` and ``category``."""
    path = Path(path)
    frame = pd.DataFrame(ds.features, columns=list(ds.feature_names))
    frame[BINARY_LABEL] = ds.binary_labels
    frame[CATEGORY_LABEL] = [CATEGORIES[c] for c in ds.category_labels]
    # repr-precision floats so that reload is exact
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


# --------------------------------------------------------------------- scaling


def fit_min_max(ds: Dataset) -> ScalingState:
    if len(ds) == 0:
        raise EmptyInputError("cannot fit scaling on an empty dataset")
    return ScalingState(ds.features.min(axis=0), ds.features.max(axis=0))


def apply_min_max(ds: Dataset, state: ScalingState) -> Dataset:
    """Scale ``ds`` into [-1, 1] using extrema fitted elsewhere.

    Values outside the fitted range are not clipped; a warning is logged with
    the count so callers scaling test data with training extrema can see it.
    """
    if ds.n_features != state.n_features:
        raise ShapeError(f"dataset has {ds.n_features} features, scaling state {state.n_features}")
    scaled = state.transform(ds.features)
    n_out = state.out_of_range_count(scaled)
    if n_out:
        logger.warning("%d scaled values fall outside %s", n_out, state.target)
    return Dataset(scaled, ds.binary_labels, ds.category_labels, state, ds.feature_names)


# --------------------------------------------------------------------- one-hot


@dataclass(frozen=True)
class OneHotEncoding:
    class_count: int

    def __post_init__(self):
        if self.class_count < 1:
            raise ConfigError("class_count must be positive")

    def encode(self, labels) -> np.ndarray:
        return one_hot(labels, self.class_count)

    @staticmethod
    def decode(encoded: np.ndarray) -> np.ndarray:
        return np.argmax(encoded, axis=1)


def one_hot(labels, class_count: int) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ValueError(f"labels must lie in [0, {class_count})")
    out = np.zeros((labels.shape[0], class_count), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels.astype(np.int64)] = 1.0
    return out


# ----------------------------------------------------------------------- split


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 42
    stratified: bool = True
    stratify_on: str = "category"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.stratify_on not in ("category", "binary"):
            raise ConfigError("stratify_on must be 'category' or 'binary'")


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``.

    Each share is the floor or ceiling of its exact quota; leftover units go to
    the largest fractional parts, lower index first on ties.
    """
    w = np.asarray(weights, dtype=np.float64)
    s = w.sum()
    if s <= 0:
        return np.zeros(w.shape[0], dtype=np.int64)
    quotas = w / s * total
    base = np.floor(quotas).astype(np.int64)
    remaining = int(total - base.sum())
    order = np.lexsort((np.arange(w.shape[0]), -(quotas - base)))
    base[order[:remaining]] += 1
    return base


def split_indices(n: int, labels: np.ndarray | None, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise EmptyInputError("need at least two rows to split")
    n_train = min(max(int(round(spec.train_fraction * n)), 1), n - 1)
    n_test = n - n_train
    rng = np.random.default_rng(spec.seed)
    if labels is None or not spec.stratified:
        perm = rng.permutation(n)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])

    classes, counts = np.unique(labels, return_counts=True)
    test_counts = largest_remainder(counts, n_test)
    test_parts = []
    for cls, k in zip(classes, test_counts):
        members = np.flatnonzero(labels == cls)
        test_parts.append(rng.permutation(members)[:k])
    test = np.sort(np.concatenate(test_parts))
    mask = np.ones(n, dtype=bool)
    mask[test] = False
    return np.flatnonzero(mask), test


def split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    """Deterministic train/test partition of ``ds``."""
    if len(ds) == 0:
        raise EmptyInputError("cannot split an empty dataset")
    labels = ds.labels("binary" if spec.stratify_on == "binary" else "multiclass")
    train_idx, test_idx = split_indices(len(ds), labels, spec)
    return ds.subset(train_idx), ds.subset(test_idx)


# ------------------------------------------------------------------- synthetic


def bot_iot_class_mix() -> tuple[float, ...]:
    """Class weights proportional to the Bot-IoT 5% extract, in encoding order."""
    total = sum(BOT_IOT_5PCT_COUNTS.values())
    return tuple(BOT_IOT_5PCT_COUNTS[c] / total for c in CATEGORIES)


@dataclass(frozen=True)
class SynthSpec:
    row_count: int = 1000
    class_mix: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    seed: int = 0
    separation: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "class_mix", tuple(float(w) for w in self.class_mix))
        if self.row_count <= 0:
            raise ConfigError("row_count must be positive")
        if len(self.class_mix) != len(CATEGORIES):
            raise ConfigError(f"class_mix needs {len(CATEGORIES)} weights")
        if any(w < 0 for w in self.class_mix):
            raise ConfigError("class_mix weights must be nonnegative")
        if abs(math.fsum(self.class_mix) - 1.0) > 1e-9:
            raise ConfigError("class_mix weights must sum to 1")
        if self.separation < 0:
            raise ConfigError("separation must be >= 0")


def class_means(separation: float, n_features: int = len(TOP10_FEATURES)) -> np.ndarray:
    """Component means on scaled simplex vertices: every pair is ``separation`` apart."""
    means = np.zeros((len(CATEGORIES), n_features))
    means[np.arange(len(CATEGORIES)), np.arange(len(CATEGORIES))] = separation / math.sqrt(2.0)
    return means


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Unit-variance Gaussian mixture over the ten features, one component per class."""
    rng = np.random.default_rng(spec.seed)
    counts = largest_remainder(spec.class_mix, spec.row_count)
    cats = np.repeat(np.arange(len(CATEGORIES)), counts)
    means = class_means(spec.separation)
    x = rng.standard_normal((spec.row_count, len(TOP10_FEATURES))) + means[cats]
    order = rng.permutation(spec.row_count)
    x, cats = x[order], cats[order]
    return Dataset(x, (cats != NORMAL).astype(np.int64), cats)

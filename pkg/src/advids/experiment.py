"""Experiment configuration, attack sweeps and report files.

A config is a TOML document with a few top-level keys and the sections
``[data]``, ``[model]``, ``[attack]`` and ``[evaluation]``. Unknown keys are
rejected so that a typo cannot silently change a sweep. Example::

    seed = 7
    output_dir = "runs/flip"

    [data]
    source = "synth"
    rows = 2000
    class_mix = [0.3, 0.175, 0.175, 0.175, 0.175]
    separation = 1.0

    [model]
    kind = "svm"

    [attack]
    kind = "flip"
    mode = "targeted"
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import mlp as _mlp
from . import svm as _svm
from .attacks import EPSILON_GRID, FLIP_GRID, FgsmSpec, LabelFlipSpec, fgsm, flip
from .data import (
    CATEGORIES,
    Dataset,
    SplitSpec,
    SynthSpec,
    apply_min_max,
    concat,
    fit_min_max,
    generate_synthetic,
    load_csv,
    one_hot,
    split,
)
from .errors import AdvidsError, ConfigError
from .metrics import METRIC_FIELDS, ConfusionMatrix, MetricsReport, compute_metrics, confusion

DEFAULT_FLIP_GRID = (0.0,) + FLIP_GRID

_TOP_KEYS = {"seed", "output_dir", "data", "model", "attack", "evaluation"}
_DATA_KEYS = {
    "source", "csv", "test_csv", "rows", "class_mix", "separation",
    "train_fraction", "stratified",
}
_SVM_KEYS = {
    "kind", "penalty_C", "max_iterations", "tolerance", "batch_size", "patience", "class_weights",
}
_MLP_KEYS = {
    "kind", "task", "hidden", "epochs", "batch_size", "learning_rate", "class_weights",
}
_ATTACK_KEYS = {"kind", "mode", "grid", "target_class", "clip"}
_EVAL_KEYS = {"scope", "averaging"}


def _check_keys(section: str, got: Mapping, allowed: set[str]) -> None:
    unknown = sorted(set(got) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _weights(raw) -> dict[int, float] | None:
    if raw is None:
        return None
    try:
        return {int(k): float(v) for k, v in dict(raw).items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"class_weights must map class index to weight: {exc}") from None


@dataclass(frozen=True)
class DataSection:
    source: str = "synth"
    csv: str | None = None
    test_csv: str | None = None
    rows: int = 2000
    class_mix: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    separation: float = 4.0
    train_fraction: float = 0.8
    stratified: bool = True

    def __post_init__(self):
        if self.source not in ("synth", "csv"):
            raise ConfigError("data.source must be 'synth' or 'csv'")
        if self.source == "csv" and not self.csv:
            raise ConfigError("data.source = 'csv' needs data.csv")
        object.__setattr__(self, "class_mix", tuple(float(w) for w in self.class_mix))


@dataclass(frozen=True)
class AttackSection:
    kind: str = "flip"
    mode: str | None = None  # default: random for flip, nontargeted for fgsm
    grid: tuple[float, ...] | None = None
    target_class: int = 0
    clip: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("flip", "fgsm"):
            raise ConfigError("attack.kind must be 'flip' or 'fgsm'")
        modes = ("random", "targeted") if self.kind == "flip" else ("nontargeted", "targeted")
        if self.mode is None:
            object.__setattr__(self, "mode", modes[0])
        if self.mode not in modes:
            raise ConfigError(f"attack.mode for {self.kind} must be one of {modes}")
        if self.grid is not None:
            g = tuple(float(v) for v in self.grid)
            if not g or any(b <= a for a, b in zip(g, g[1:])):
                raise ConfigError("attack.grid must be nonempty and strictly increasing")
            object.__setattr__(self, "grid", g)
        if self.clip is not None:
            if len(self.clip) != 2:
                raise ConfigError("attack.clip must be [lo, hi]")
            object.__setattr__(self, "clip", (float(self.clip[0]), float(self.clip[1])))

    @property
    def resolved_grid(self) -> tuple[float, ...]:
        if self.grid is not None:
            return self.grid
        return DEFAULT_FLIP_GRID if self.kind == "flip" else EPSILON_GRID


@dataclass(frozen=True)
class EvalSection:
    scope: str | None = None  # default: combined for SVM, test for MLP
    averaging: str | None = None

    def __post_init__(self):
        if self.scope not in (None, "combined", "test"):
            raise ConfigError("evaluation.scope must be 'combined' or 'test'")
        if self.averaging not in (None, "binary", "macro", "micro"):
            raise ConfigError("evaluation.averaging must be binary, macro or micro")


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str
    data: DataSection = DataSection()
    svm: _svm.SvmTrainConfig | None = None
    mlp_train: _mlp.TrainConfig | None = None
    mlp_hidden: tuple[int, ...] = _mlp.DEFAULT_HIDDEN
    task: str = "binary"
    attack: AttackSection | None = None
    evaluation: EvalSection = EvalSection()
    output_dir: str = "advids-out"
    seed: int = 0

    def __post_init__(self):
        if self.model_kind not in ("svm", "mlp"):
            raise ConfigError("model.kind must be 'svm' or 'mlp'")
        if self.task not in ("binary", "multiclass"):
            raise ConfigError("model.task must be 'binary' or 'multiclass'")
        if self.model_kind == "svm" and self.task != "binary":
            raise ConfigError("the SVM is a binary classifier")

    @property
    def scope(self) -> str:
        if self.evaluation.scope is not None:
            return self.evaluation.scope
        return "combined" if self.model_kind == "svm" else "test"

    @property
    def n_classes(self) -> int:
        return 2 if self.task == "binary" else len(CATEGORIES)

    def svm_config(self) -> _svm.SvmTrainConfig:
        base = self.svm or _svm.SvmTrainConfig()
        return replace(base, seed=self.seed)

    def mlp_config(self) -> _mlp.TrainConfig:
        base = self.mlp_train or _mlp.TrainConfig()
        return replace(base, seed=self.seed)

    def architecture(self) -> _mlp.MlpArchitecture:
        return _mlp.MlpArchitecture((_mlp.N_FEATURES,) + tuple(self.mlp_hidden) + (self.n_classes,))

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "model_kind": self.model_kind,
            "task": self.task,
            "data": asdict(self.data),
            "svm": None if self.svm is None else self.svm.to_dict(),
            "mlp_train": None if self.mlp_train is None else asdict(self.mlp_train),
            "mlp_hidden": list(self.mlp_hidden),
            "attack": None if self.attack is None else asdict(self.attack),
            "evaluation": asdict(self.evaluation),
        }
        return json.loads(json.dumps(d, default=str))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any], base_dir: Path | None = None) -> "ExperimentConfig":
        _check_keys("top level", doc, _TOP_KEYS)
        data_raw = dict(doc.get("data", {}))
        _check_keys("data", data_raw, _DATA_KEYS)
        for key in ("csv", "test_csv"):
            if data_raw.get(key) and base_dir is not None and not Path(data_raw[key]).is_absolute():
                data_raw[key] = str(base_dir / data_raw[key])
        model_raw = dict(doc.get("model", {}))
        if "kind" not in model_raw:
            raise ConfigError("[model] needs a 'kind' key ('svm' or 'mlp')")
        kind = model_raw["kind"]
        try:
            data = DataSection(**data_raw)
            kw: dict[str, Any] = {"model_kind": kind, "data": data}
            if kind == "svm":
                _check_keys("model", model_raw, _SVM_KEYS)
                params = {k: v for k, v in model_raw.items() if k != "kind"}
                params["class_weights"] = _weights(params.get("class_weights"))
                kw["svm"] = _svm.SvmTrainConfig(**params)
            elif kind == "mlp":
                _check_keys("model", model_raw, _MLP_KEYS)
                params = {k: v for k, v in model_raw.items() if k not in ("kind", "task", "hidden")}
                params["class_weights"] = _weights(params.get("class_weights"))
                kw["mlp_train"] = _mlp.TrainConfig(**params)
                kw["task"] = model_raw.get("task", "binary")
                if "hidden" in model_raw:
                    kw["mlp_hidden"] = tuple(int(h) for h in model_raw["hidden"])
            else:
                raise ConfigError("model.kind must be 'svm' or 'mlp'")
            if "attack" in doc:
                attack_raw = dict(doc["attack"])
                _check_keys("attack", attack_raw, _ATTACK_KEYS)
                kw["attack"] = AttackSection(**attack_raw)
            if "evaluation" in doc:
                eval_raw = dict(doc["evaluation"])
                _check_keys("evaluation", eval_raw, _EVAL_KEYS)
                kw["evaluation"] = EvalSection(**eval_raw)
            if "output_dir" in doc:
                kw["output_dir"] = str(doc["output_dir"])
            if "seed" in doc:
                kw["seed"] = int(doc["seed"])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_mapping(doc, base_dir=path.parent)


# ------------------------------------------------------------------ data prep


@dataclass(frozen=True)
class PreparedData:
    train: Dataset
    test: Dataset
    out_of_range: int

    @property
    def combined(self) -> Dataset:
        return concat(self.train, self.test)


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Load or synthesise, split 80/20 (unless a test file is given), scale with train extrema."""
    d = cfg.data
    if d.source == "synth":
        raw = generate_synthetic(SynthSpec(d.rows, d.class_mix, cfg.seed, d.separation))
    else:
        raw = load_csv(d.csv)
    if d.test_csv:
        train, test = raw, load_csv(d.test_csv)
    else:
        train, test = split(raw, SplitSpec(d.train_fraction, cfg.seed, d.stratified))
    state = fit_min_max(train)
    train_s = apply_min_max(train, state)
    test_s = apply_min_max(test, state)
    return PreparedData(train_s, test_s, state.out_of_range_count(test_s.features))


# ---------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepRow:
    param: float
    report: MetricsReport
    confusion: ConfusionMatrix
    extra: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SweepResult:
    parameter: str
    rows: tuple[SweepRow, ...]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        params = [r.param for r in self.rows]
        if any(b <= a for a, b in zip(params, params[1:])):
            raise ValueError("sweep parameter values must be strictly increasing")

    @property
    def params(self) -> list[float]:
        return [r.param for r in self.rows]

    def series(self, metric: str) -> list[float | None]:
        return [getattr(r.report, metric) for r in self.rows]


def _threads() -> int:
    try:
        return max(0, int(os.environ.get("ADVIDS_THREADS", "0")))
    except ValueError:
        return 0


def _map_grid(fn: Callable[[float], SweepRow], grid: Sequence[float], what: str) -> list[SweepRow]:
    def guarded(p: float) -> SweepRow:
        try:
            return fn(p)
        except AdvidsError as exc:
            exc.args = (f"{what}={p:g}: {exc}",) + exc.args[1:]
            raise
    workers = _threads()
    if workers:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(guarded, grid))
    return [guarded(p) for p in grid]


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _flip_seed(seed: int, fraction: float) -> int:
    # independent index sample per grid level
    return int(np.random.SeedSequence([seed, int(round(fraction * 1_000_000))]).generate_state(1)[0])


def evaluate_svm(model: _svm.LinearSvmModel, ds: Dataset) -> tuple[MetricsReport, ConfusionMatrix]:
    return _svm.evaluate(model, ds)


def run_svm_flip_sweep(cfg: ExperimentConfig, data: PreparedData | None = None) -> SweepResult:
    """Poison the training labels at each flip fraction, retrain from scratch, evaluate.

    Targeted flips rank rows by their margin under the model trained on the
    clean data. Evaluation uses clean labels on the combined train+test data
    (or the test split when ``evaluation.scope = "test"``).
    """
    if cfg.model_kind != "svm":
        raise ConfigError("flip sweeps need model.kind = 'svm'")
    attack = cfg.attack or AttackSection("flip", "random")
    if attack.kind != "flip":
        raise ConfigError("flip sweeps need attack.kind = 'flip'")
    started = _now()
    data = data or prepare_data(cfg)
    svm_cfg = cfg.svm_config()
    clean = _svm.train_svm(data.train, svm_cfg)
    eval_ds = data.combined if cfg.scope == "combined" else data.test

    def point(fraction: float) -> SweepRow:
        spec = LabelFlipSpec(attack.mode, fraction, _flip_seed(cfg.seed, fraction))
        poisoned, record = flip(data.train, spec, clean)
        model = clean if len(record) == 0 else _svm.train_svm(poisoned, svm_cfg)
        report, cm = _svm.evaluate(model, eval_ds)
        return SweepRow(
            fraction,
            report,
            cm,
            {
                "flipped": len(record),
                "converged": model.converged,
                "iterations": model.train_iterations_used,
            },
        )

    rows = _map_grid(point, attack.resolved_grid, "fraction")
    meta = {
        "kind": "svm-flip",
        "mode": attack.mode,
        "scope": cfg.scope,
        "config_hash": cfg.config_hash(),
        "dataset_fingerprint": data.train.fingerprint(),
        "train_rows": len(data.train),
        "test_rows": len(data.test),
        "test_out_of_range": data.out_of_range,
        "flip_sampling": "independent per level",
        "started_at": started,
        "finished_at": _now(),
    }
    return SweepResult("fraction", rows, meta)


def train_clean_mlp(cfg: ExperimentConfig, data: PreparedData) -> _mlp.MlpModel:
    return _mlp.train(_mlp.init(cfg.architecture(), cfg.seed), data.train, cfg.mlp_config(), cfg.task)


def evaluate_mlp(
    model: _mlp.MlpModel, x: np.ndarray, labels: np.ndarray, averaging: str | None = None
) -> tuple[MetricsReport, ConfusionMatrix]:
    k = model.n_outputs
    names = ("benign", "attack") if k == 2 else CATEGORIES
    cm = confusion(labels, _mlp.predict(model, x), k, names)
    return compute_metrics(cm, averaging, loss=_mlp.loss(model, x, one_hot(labels, k))), cm


def run_fgsm_sweep(
    cfg: ExperimentConfig, data: PreparedData | None = None, model: _mlp.MlpModel | None = None
) -> SweepResult:
    """Train once on clean data, then perturb the test split at each epsilon."""
    if cfg.model_kind != "mlp":
        raise ConfigError("FGSM sweeps need model.kind = 'mlp'")
    attack = cfg.attack or AttackSection("fgsm", "nontargeted")
    if attack.kind != "fgsm":
        raise ConfigError("FGSM sweeps need attack.kind = 'fgsm'")
    started = _now()
    data = data or prepare_data(cfg)
    model = model or train_clean_mlp(cfg, data)
    eval_ds = data.test if cfg.scope == "test" else data.combined
    labels = eval_ds.labels(cfg.task)
    y_true = one_hot(labels, model.n_outputs)
    targeted = attack.mode == "targeted"

    def point(eps: float) -> SweepRow:
        spec = FgsmSpec(eps, targeted, attack.target_class if targeted else None, attack.clip)
        x_adv = fgsm(model, eval_ds.features, y_true, spec)
        report, cm = evaluate_mlp(model, x_adv, labels, cfg.evaluation.averaging)
        return SweepRow(eps, report, cm)

    rows = _map_grid(point, attack.resolved_grid, "epsilon")
    meta = {
        "kind": "mlp-fgsm",
        "mode": attack.mode,
        "task": cfg.task,
        "scope": cfg.scope,
        "target_class": attack.target_class if targeted else None,
        "clip": None if attack.clip is None else list(attack.clip),
        "config_hash": cfg.config_hash(),
        "dataset_fingerprint": data.train.fingerprint(),
        "train_rows": len(data.train),
        "test_rows": len(data.test),
        "test_out_of_range": data.out_of_range,
        "final_train_loss": model.loss_trace[-1] if model.loss_trace else None,
        "started_at": started,
        "finished_at": _now(),
    }
    return SweepResult("epsilon", rows, meta)


# --------------------------------------------------------------------- reports

CSV_COLUMNS = METRIC_FIELDS + ("loss", "averaging")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _param_label(p: float) -> str:
    return f"{p:g}"


def _write(path: Path, text: str) -> Path:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def sweep_csv_text(r: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((r.parameter,) + CSV_COLUMNS)
    for row in r.rows:
        rep = row.report
        w.writerow([_fmt(float(row.param))] + [_fmt(getattr(rep, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_reports(r: SweepResult, directory: str | Path) -> list[Path]:
    """Write sweep.csv, sweep.json, plotdata.csv and one confusion_<param>.json per grid point."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from exc
    written = [_write(out / "sweep.csv", sweep_csv_text(r))]

    doc = {
        "parameter": r.parameter,
        "metadata": dict(r.metadata),
        "rows": [
            {
                r.parameter: row.param,
                "report": row.report.to_dict(),
                "flags": list(row.report.flags),
                "confusion": row.confusion.to_dict(),
                "extra": dict(row.extra),
            }
            for row in r.rows
        ],
    }
    written.append(_write(out / "sweep.json", json.dumps(doc, indent=2, sort_keys=True) + "\n"))

    for row in r.rows:
        cm_doc = {r.parameter: row.param, **row.confusion.to_dict()}
        name = f"confusion_{_param_label(row.param)}.json"
        written.append(_write(out / name, json.dumps(cm_doc, indent=2, sort_keys=True) + "\n"))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("metric", r.parameter, "value"))
    for metric in METRIC_FIELDS + ("loss",):
        for row in r.rows:
            value = getattr(row.report, metric)
            if value is not None:
                w.writerow((metric, _fmt(float(row.param)), _fmt(value)))
    written.append(_write(out / "plotdata.csv", buf.getvalue()))
    return written


def read_sweep_csv(path: str | Path) -> tuple[str, list[tuple[float, MetricsReport]]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        parameter = reader.fieldnames[0]
        rows = [(float(rec[parameter]), MetricsReport.from_dict(rec)) for rec in reader]
    return parameter, rows

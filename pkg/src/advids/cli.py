"""``advids`` command line.

Exit status: 0 on success, 1 for usage or configuration errors, 2 for
failures while running (bad data, training errors, I/O).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import mlp as _mlp
from . import svm as _svm
from .data import (
    SplitSpec,
    SynthSpec,
    apply_min_max,
    bot_iot_class_mix,
    fit_min_max,
    generate_synthetic,
    load_csv,
    save_csv,
    split,
)
from .errors import AdvidsError, ConfigError
from .experiment import (
    AttackSection,
    ExperimentConfig,
    emit_reports,
    evaluate_mlp,
    run_fgsm_sweep,
    run_svm_flip_sweep,
)
from .metrics import roc_auc

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("advids")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_config(args, default_kind: str) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig(model_kind=default_kind)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


# ----------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    mix = bot_iot_class_mix() if args.bot_iot_mix else (args.mix or (0.2,) * 5)
    seed = 42 if args.seed is None else args.seed
    ds = generate_synthetic(SynthSpec(args.rows, mix, seed, args.separation))
    save_csv(ds, args.out)
    _print_json({"rows": len(ds), "out": str(args.out), "class_counts": np.bincount(ds.category_labels, minlength=5).tolist()})
    return EXIT_OK


def cmd_preprocess(args) -> int:
    raw = load_csv(args.input)
    if args.test_input:
        train, test = raw, load_csv(args.test_input)
    else:
        seed = 42 if args.seed is None else args.seed
        train, test = split(raw, SplitSpec(args.train_fraction, seed, not args.no_stratify))
    state = fit_min_max(train)
    train_s, test_s = apply_min_max(train, state), apply_min_max(test, state)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(train_s, out / "train.csv")
    save_csv(test_s, out / "test.csv")
    (out / "scaling.json").write_text(json.dumps(state.to_dict(), indent=2))
    _print_json(
        {
            "train_rows": len(train_s),
            "test_rows": len(test_s),
            "train_class_counts": np.bincount(train_s.category_labels, minlength=5).tolist(),
            "test_class_counts": np.bincount(test_s.category_labels, minlength=5).tolist(),
            "test_out_of_range": state.out_of_range_count(test_s.features),
        }
    )
    return EXIT_OK


def cmd_train_svm(args) -> int:
    cfg = _load_config(args, "svm")
    if cfg.model_kind != "svm":
        raise ConfigError("config describes an MLP; use train-ann")
    ds = load_csv(args.data, check_labels=False)
    model = _svm.train_svm(ds, cfg.svm_config())
    model.save(args.out)
    report, cm = _svm.evaluate(model, ds)
    _print_json({"converged": model.converged, "epochs": model.train_iterations_used, "train": report.to_dict()})
    return EXIT_OK


def cmd_train_ann(args) -> int:
    cfg = _load_config(args, "mlp")
    if cfg.model_kind != "mlp":
        raise ConfigError("config describes an SVM; use train-svm")
    if args.task:
        cfg = replace(cfg, task=args.task)
    tcfg = cfg.mlp_config()
    tcfg = replace(
        tcfg,
        **{k: v for k, v in (("epochs", args.epochs), ("batch_size", args.batch_size), ("learning_rate", args.learning_rate)) if v is not None},
    )
    ds = load_csv(args.data, check_labels=False)
    model = _mlp.train(_mlp.init(cfg.architecture(), cfg.seed), ds, tcfg, cfg.task)
    model.save(args.out)
    report, _ = evaluate_mlp(model, ds.features, ds.labels(cfg.task))
    _print_json({"loss_trace": list(model.loss_trace), "train": report.to_dict()})
    return EXIT_OK


def _load_model(path: Path):
    doc = json.loads(Path(path).read_text())
    if "layer_sizes" in doc:
        return _mlp.MlpModel.from_dict(doc)
    if "weights" in doc and "bias" in doc:
        return _svm.LinearSvmModel.from_dict(doc)
    raise ConfigError(f"{path}: not a recognised model file")


def cmd_evaluate(args) -> int:
    model = _load_model(args.model)
    ds = load_csv(args.data, check_labels=False)
    result: dict = {}
    if isinstance(model, _svm.LinearSvmModel):
        report, cm = _svm.evaluate(model, ds)
        scores = _svm.decision_values(model, ds)
        labels = ds.binary_labels
    else:
        task = "binary" if model.n_outputs == 2 else "multiclass"
        labels = ds.labels(task)
        report, cm = evaluate_mlp(model, ds.features, labels, args.averaging)
        scores = _mlp.forward(model, ds.features)[:, 1] if task == "binary" else None
    result["report"] = report.to_dict()
    result["flags"] = list(report.flags)
    result["confusion"] = cm.to_dict()
    if scores is not None and np.unique(ds.binary_labels).size == 2:
        roc = roc_auc(scores, ds.binary_labels)
        result["auc"] = roc.auc
        if args.roc_out:
            Path(args.roc_out).write_text(
                "fpr,tpr\n" + "".join(f"{f!r},{t!r}\n" for f, t in roc.points)
            )
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2))
    _print_json(result)
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = _load_config(args, "svm")
    if cfg.model_kind != "svm":
        raise ConfigError("cross-validation runs the SVM; config has model.kind = 'mlp'")
    ds = load_csv(args.data, check_labels=False)
    reports = _svm.cross_validate(ds, cfg.svm_config(), args.folds)
    folds = [r.to_dict() for r in reports]
    mean = {k: float(np.mean([f[k] for f in folds])) for k in ("accuracy", "precision", "recall", "f1")}
    _print_json({"folds": folds, "mean": mean})
    return EXIT_OK


def _sweep_cfg(args, kind: str) -> ExperimentConfig:
    default_kind = "svm" if kind == "flip" else "mlp"
    cfg = _load_config(args, default_kind)
    attack = cfg.attack or AttackSection(kind, "random" if kind == "flip" else "nontargeted")
    if attack.kind != kind:
        raise ConfigError(f"config attack.kind is {attack.kind!r}, expected {kind!r}")
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.grid:
        changes["grid"] = args.grid
    if kind == "fgsm":
        if args.target_class is not None:
            changes["target_class"] = args.target_class
        if args.clip:
            changes["clip"] = (-1.0, 1.0)
    attack = AttackSection(**{**attack.__dict__, **changes})
    cfg = replace(cfg, attack=attack)
    if kind == "fgsm" and args.task:
        cfg = replace(cfg, task=args.task)
    if args.out:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def cmd_flip_sweep(args) -> int:
    cfg = _sweep_cfg(args, "flip")
    result = run_svm_flip_sweep(cfg)
    files = emit_reports(result, cfg.output_dir)
    _print_json({"output_dir": cfg.output_dir, "points": len(result.rows), "files": [p.name for p in files]})
    return EXIT_OK


def cmd_fgsm_sweep(args) -> int:
    cfg = _sweep_cfg(args, "fgsm")
    result = run_fgsm_sweep(cfg)
    files = emit_reports(result, cfg.output_dir)
    _print_json({"output_dir": cfg.output_dir, "points": len(result.rows), "files": [p.name for p in files]})
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config")
    common.add_argument("--seed", type=int, help="override the config/global seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="advids", description="Adversarial attacks on ML intrusion detectors.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    s = sub.add_parser("preprocess", parents=[common], help="drop identifiers, split, min-max scale")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--test-input", type=Path)
    s.add_argument("--out-dir", type=Path, required=True)
    s.add_argument("--train-fraction", type=float, default=0.8)
    s.add_argument("--no-stratify", action="store_true")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic Bot-IoT look-alike CSV")
    s.add_argument("--rows", type=int, default=1000)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--separation", type=float, default=4.0)
    s.add_argument("--mix", type=_floats, help="five class weights, Normal first")
    s.add_argument("--bot-iot-mix", action="store_true", help="class weights of the Bot-IoT 5%% extract")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-svm", parents=[common], help="train the linear SVM on scaled data")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_train_svm)

    s = sub.add_parser("train-ann", parents=[common], help="train the MLP on scaled data")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--task", choices=("binary", "multiclass"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--learning-rate", type=float)
    s.set_defaults(func=cmd_train_ann)

    s = sub.add_parser("evaluate", parents=[common], help="score a saved model on a dataset")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--averaging", choices=("binary", "macro", "micro"))
    s.add_argument("--out", type=Path)
    s.add_argument("--roc-out", type=Path)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("cv", parents=[common], help="stratified k-fold cross-validation of the SVM")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--folds", type=int, default=4)
    s.set_defaults(func=cmd_cv)

    for name, kind, modes, func in (
        ("flip-sweep", "flip", ("random", "targeted"), cmd_flip_sweep),
        ("fgsm-sweep", "fgsm", ("targeted", "nontargeted"), cmd_fgsm_sweep),
    ):
        s = sub.add_parser(name, parents=[common], help=f"{kind} attack sweep with report files")
        s.add_argument("--mode", choices=modes)
        s.add_argument("--grid", type=_floats, help="comma-separated parameter values")
        s.add_argument("--out", type=Path, help="output directory (overrides config)")
        if kind == "fgsm":
            s.add_argument("--task", choices=("binary", "multiclass"))
            s.add_argument("--target-class", type=int)
            s.add_argument("--clip", action="store_true", help="clip perturbed features to [-1, 1]")
        s.set_defaults(func=func)
    return p


def cli_dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AdvidsError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_dispatch())

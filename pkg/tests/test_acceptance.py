"""End-to-end acceptance criteria; each test prints one PASS/FAIL/SKIP line in the summary."""
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from advids.attacks import FgsmSpec, LabelFlipSpec, fgsm, flip, flip_count, flip_revert
from advids.cli import cli_dispatch
from advids.data import (
    Dataset,
    SplitSpec,
    apply_min_max,
    concat,
    fit_min_max,
    load_csv,
    one_hot,
    split_indices,
)
from advids.experiment import (
    AttackSection,
    DataSection,
    ExperimentConfig,
    run_fgsm_sweep,
    run_svm_flip_sweep,
)
from advids.metrics import ConfusionMatrix, compute_metrics, roc_auc
from advids.mlp import (
    MlpArchitecture,
    MlpModel,
    TrainConfig,
    init,
    input_gradient,
    loss,
    parameter_gradients,
    predict,
)
from advids.mlp import train as train_mlp
from advids.svm import LinearSvmModel, SvmTrainConfig, evaluate, train_svm

from conftest import IMBALANCED_MIX

pytestmark = pytest.mark.acceptance


# ------------------------------------------------------------------ AC1


def scalar_rates(tp, tn, fp, fn):
    """Independent exact path: every rate as a Fraction, 0 when undefined."""
    def q(num, den):
        return Fraction(num, den) if den else Fraction(0)

    p, r = q(tp, tp + fp), q(tp, tp + fn)
    return {
        "tpr": r,
        "tnr": q(tn, tn + fp),
        "fpr": q(fp, fp + tn),
        "fnr": q(fn, fn + tp),
        "precision": p,
        "recall": r,
        "f1": 2 * p * r / (p + r) if p + r else Fraction(0),
    }


def scalar_metrics(counts, averaging):
    k = len(counts)
    total = sum(sum(row) for row in counts)
    diag = sum(counts[i][i] for i in range(k))
    out = {"accuracy": Fraction(diag, total)}

    def ovr(c):
        tp = counts[c][c]
        fn = sum(counts[c]) - tp
        fp = sum(counts[i][c] for i in range(k)) - tp
        return tp, total - tp - fn - fp, fp, fn

    if averaging == "binary":
        out.update(scalar_rates(counts[1][1], counts[0][0], counts[0][1], counts[1][0]))
    elif averaging == "macro":
        per = [scalar_rates(*ovr(c)) for c in range(k)]
        out.update({m: sum(p[m] for p in per) / k for m in per[0]})
    else:
        sums = [sum(v) for v in zip(*(ovr(c) for c in range(k)))]
        out.update(scalar_rates(*sums))
    return out


def test_ac1_metric_identity_suite():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    for i in range(1000):
        k = int(rng.integers(2, 6))
        counts = rng.integers(0, 50, (k, k))
        # sparse matrices exercise the zero-denominator paths
        counts[rng.random((k, k)) < 0.3] = 0
        if counts.sum() == 0:
            counts[0, 0] = 1
        modes = ("binary", "macro", "micro") if k == 2 else ("macro", "micro")
        for mode in modes:
            got = compute_metrics(ConfusionMatrix(counts), averaging=mode)
            want = scalar_metrics(counts.tolist(), mode)
            assert got.accuracy == float(want["accuracy"])
            for name, value in want.items():
                assert abs(getattr(got, name) - float(value)) <= 1e-12, (i, mode, name)
    assert time.perf_counter() - start < 5.0


# ------------------------------------------------------------------ AC2

# (row, precision, recall, reference F1), two attack strengths per row
REFERENCE_PRF = [
    ("random flip 0%", 0.999, 1.0, 0.999),
    ("random flip 50%", 0.610, 0.613, 0.612),
    ("targeted flip 0%", 0.999, 1.0, 0.999),
    ("targeted flip 50%", 0.621, 0.913, 0.737),
    ("binary targeted eps 0", 0.996, 0.996, 0.996),
    ("binary targeted eps 1", 0.895, 0.563, 0.690),
    ("binary non-targeted eps 0", 0.996, 0.996, 0.996),
    ("binary non-targeted eps 1", 0.769, 0.771, 0.769),
    ("multi targeted eps 0", 0.952, 0.957, 0.955),
    ("multi targeted eps 1", 0.312, 0.493, 0.382),
    ("multi non-targeted eps 0", 0.952, 0.957, 0.955),
    ("multi non-targeted eps 1", 0.153, 0.249, 0.189),
]


def test_ac2_reference_f1_consistency():
    for row, p, r, f1 in REFERENCE_PRF:
        # pick counts whose precision and recall reproduce the pair to 1e-6
        tp = 10**6
        fn = round(tp / r) - tp
        fp = round(tp / p) - tp
        report = compute_metrics(ConfusionMatrix(np.array([[10**6, fp], [fn, tp]])))
        assert abs(report.precision - p) < 1e-6 and abs(report.recall - r) < 1e-6
        assert abs(report.f1 - f1) <= 0.01, row


# ------------------------------------------------------------------ AC3


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def fd_parameter_gradients(m, x, y, h=1e-5):
    ws = [w.copy() for w in m.weights]
    bs = [b.copy() for b in m.biases]

    def objective():
        return loss(MlpModel(tuple(ws), tuple(bs), m.architecture), x, y)

    grads = []
    for arr in ws + bs:
        g = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + h
            up = objective()
            arr[idx] = keep - h
            down = objective()
            arr[idx] = keep
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def fd_input_gradient(m, x, y, h=1e-5):
    g = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (loss(m, xp, y) - loss(m, xm, y)) / (2 * h)
    return g


def test_ac3_gradient_check_against_finite_differences():
    rng = np.random.default_rng(7)
    archs = [(10, 20, 60, 80, 90, 2), (10, 20, 60, 80, 90, 5)]
    while len(archs) < 22:
        depth = int(rng.integers(1, 5))
        hidden = tuple(int(v) for v in rng.integers(1, 13, depth - 1))
        archs.append((int(rng.integers(1, 11)),) + hidden + (int(rng.integers(1, 6)),))
    start = time.perf_counter()
    worst = 0.0
    for i, sizes in enumerate(archs):
        m = init(MlpArchitecture(sizes), i)
        m = MlpModel(m.weights, tuple(rng.normal(0, 0.5, b.shape) for b in m.biases), m.architecture)
        x = rng.uniform(-1, 1, (4, sizes[0]))
        y = one_hot(rng.integers(0, sizes[-1], 4), sizes[-1])
        gw, gb = parameter_gradients(m, x, y)
        for analytic, numeric in zip(gw + gb, fd_parameter_gradients(m, x, y)):
            worst = max(worst, rel_error(analytic, numeric))
        worst = max(worst, rel_error(input_gradient(m, x, y), fd_input_gradient(m, x, y)))
    assert worst < 1e-4, worst
    assert time.perf_counter() - start < 60.0


# ------------------------------------------------------------------ AC4


def two_sum_diff(a, b):
    """a - b as an exact unevaluated pair (s, e)."""
    s = a - b
    bb = s - a
    e = (a - (s - bb)) + (-b - bb)
    return s, e


def test_ac4_fgsm_invariants():
    rng = np.random.default_rng(11)
    m = init(MlpArchitecture.reference(2), 3)
    x = rng.uniform(-1, 1, (10_000, 10))
    y = one_hot(rng.integers(0, 2, 10_000), 2)
    # dyadic rows make x +/- eps exact for eps in {0.5, 1}
    x_dyadic = np.round(x * 1024) / 1024
    for eps in (0.0, 0.1, 0.5, 1.0):
        for targeted in (False, True):
            spec = FgsmSpec(eps, targeted=targeted, target_class=1 if targeted else None)
            adv = fgsm(m, x, None if targeted else y, spec)
            if eps == 0.0:
                assert adv.tobytes() == x.tobytes()
                continue
            # each coordinate is x, fl(x + eps) or fl(x - eps)
            moved_up, moved_down, still = adv == x + eps, adv == x - eps, adv == x
            assert np.all(moved_up | moved_down | still)
            # exact displacement is within eps up to the one rounding of x + eps
            s, e = two_sum_diff(adv, x)
            excess = np.abs(s) - eps + np.where(s >= 0, e, -e)
            assert np.all(excess <= np.spacing(np.abs(adv)) / 2)
            adv_d = fgsm(m, x_dyadic, None if targeted else y, spec)
            if eps in (0.5, 1.0):
                d = np.abs(adv_d - x_dyadic)
                assert np.all((d == 0.0) | (d == eps))


# ------------------------------------------------------------------ AC5


def test_ac5_fgsm_efficacy_at_desk_scale():
    start = time.perf_counter()
    cfg = ExperimentConfig(
        "mlp",
        data=DataSection(rows=3000, class_mix=(0.3, 0.175, 0.175, 0.175, 0.175), separation=8.0),
        mlp_train=TrainConfig(epochs=20, batch_size=32, learning_rate=0.05),
        attack=AttackSection("fgsm", "nontargeted", (0.0, 0.5)),
        seed=1,
    )
    clean, attacked = run_fgsm_sweep(cfg).rows
    assert clean.report.accuracy >= 0.99
    assert clean.report.accuracy - attacked.report.accuracy >= 0.10
    assert attacked.report.loss > clean.report.loss
    assert time.perf_counter() - start < 300.0


# ------------------------------------------------------------------ AC6


def test_ac6_label_flip_correctness():
    rng = np.random.default_rng(5)
    for i in range(1000):
        n = int(rng.integers(1, 400))
        y = rng.integers(0, 2, n)
        ds = Dataset(rng.normal(size=(n, 10)), y, y * int(rng.integers(1, 5)))
        fraction = float(rng.integers(0, 1001)) / 1000
        mode = "random" if i % 2 else "targeted"
        model = LinearSvmModel(rng.normal(size=10), float(rng.normal()))
        flipped, record = flip(ds, LabelFlipSpec(mode, fraction, i), model)
        assert len(record) == math.floor(Fraction(repr(fraction)) * n) == flip_count(fraction, n)
        assert int(np.sum(flipped.binary_labels != ds.binary_labels)) == len(record)
        back = flip_revert(flipped, record)
        assert back.binary_labels.tobytes() == ds.binary_labels.tobytes()
        assert back.fingerprint() == ds.fingerprint()

    for trial in range(3):
        x = rng.normal(size=(1000, 10))
        y = (x[:, 0] + 0.5 * rng.normal(size=1000) > 0).astype(int)
        ds = Dataset(x, y, y * 2)
        model = train_svm(ds, SvmTrainConfig(seed=trial)) if trial == 0 else LinearSvmModel(
            rng.normal(size=10), float(rng.normal())
        )
        w, b = model.weights.tolist(), model.bias
        norm = math.sqrt(sum(v * v for v in w))
        dist = [abs(sum(a * c for a, c in zip(row, w)) + b) / norm for row in x.tolist()]
        order = sorted(range(1000), key=lambda j: (dist[j], j))
        for fraction in (0.05, 0.25, 0.5):
            _, record = flip(ds, LabelFlipSpec("targeted", fraction), model)
            assert record.flipped_indices.tolist() == sorted(order[: int(fraction * 1000)])


# ------------------------------------------------------------------ AC7


@pytest.mark.parametrize("seed", range(5))
def test_ac7_poisoning_efficacy_at_desk_scale(seed):
    def sweep(mode):
        cfg = ExperimentConfig(
            "svm",
            data=DataSection(rows=2000, class_mix=IMBALANCED_MIX, separation=3.0),
            attack=AttackSection("flip", mode, (0.0, 0.5)),
            seed=seed,
        )
        return run_svm_flip_sweep(cfg).rows[1].report

    random50, targeted50 = sweep("random"), sweep("targeted")
    assert random50.accuracy < 0.7
    assert targeted50.recall > random50.recall


# ------------------------------------------------------------------ AC8


def test_ac8_auc_matches_pairwise_probability():
    rng = np.random.default_rng(8)
    for i in range(200):
        n = int(rng.integers(2, 1001))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = rng.normal(size=n) + 0.7 * y
        if i % 3 == 0:
            s = np.round(s, 1)  # heavy ties
        pos, neg = s[y == 1], s[y == 0]
        diff = pos[:, None] - neg[None, :]
        pairwise = (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size
        assert abs(roc_auc(s, y).auc - pairwise) <= 1e-9


# ------------------------------------------------------------------ AC9


def test_ac9_cli_sweeps_are_byte_deterministic(tmp_path, monkeypatch, capsys):
    flip_cfg = tmp_path / "flip.toml"
    flip_cfg.write_text('seed = 3\n[data]\nrows = 600\nseparation = 2.0\n[model]\nkind = "svm"\n'
                        '[attack]\nkind = "flip"\n')
    fgsm_cfg = tmp_path / "fgsm.toml"
    fgsm_cfg.write_text('seed = 3\n[data]\nrows = 600\n[model]\nkind = "mlp"\nepochs = 3\nbatch_size = 32\n'
                        '[attack]\nkind = "fgsm"\n')
    runs = [
        ("flip-sweep", flip_cfg, "--mode", "random"),
        ("flip-sweep", flip_cfg, "--mode", "targeted"),
        ("fgsm-sweep", fgsm_cfg, "--mode", "nontargeted"),
        ("fgsm-sweep", fgsm_cfg, "--mode", "targeted"),
    ]
    for n, (cmd, cfg, *extra) in enumerate(runs):
        outputs = []
        for rep, threads in enumerate(("0", "0", "2")):
            monkeypatch.setenv("ADVIDS_THREADS", threads)
            out = tmp_path / f"{n}-{rep}"
            assert cli_dispatch([cmd, "--config", str(cfg), "--out", str(out), *extra]) == 0
            outputs.append((out / "sweep.csv").read_bytes())
        assert outputs[0] == outputs[1] == outputs[2], cmd
    capsys.readouterr()


# ------------------------------------------------------------------ AC10

BOTIOT_TRAIN = os.environ.get("ADVIDS_BOTIOT_TRAIN")
BOTIOT_TEST = os.environ.get("ADVIDS_BOTIOT_TEST")
SUBSAMPLE_ROWS = 500_000


def stratified_subsample(ds, rows, seed):
    if len(ds) <= rows:
        return ds
    _, keep = split_indices(len(ds), ds.category_labels, SplitSpec(1 - rows / len(ds), seed))
    return ds.subset(np.sort(keep))


@pytest.mark.slow
@pytest.mark.skipif(not (BOTIOT_TRAIN and BOTIOT_TEST),
                    reason="set ADVIDS_BOTIOT_TRAIN and ADVIDS_BOTIOT_TEST to the Bot-IoT 5% CSVs")
def test_ac10_bot_iot_baseline():
    train_raw = stratified_subsample(load_csv(BOTIOT_TRAIN), int(SUBSAMPLE_ROWS * 0.8), 0)
    test_raw = stratified_subsample(load_csv(BOTIOT_TEST), int(SUBSAMPLE_ROWS * 0.2), 0)
    state = fit_min_max(train_raw)
    train, test = apply_min_max(train_raw, state), apply_min_max(test_raw, state)

    svm_report, _ = evaluate(train_svm(train), concat(train, test))
    assert abs(svm_report.accuracy * 100 - 85.897) <= 3.0

    net = train_mlp(init(MlpArchitecture.reference(2), 0), train, TrainConfig())
    assert np.mean(predict(net, test.features) == test.binary_labels) >= 0.99

"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal."""
import json
import time

import numpy as np
import pytest

from afburden import cli, pipeline
from afburden.arnet import CnnModel, GruClassifier
from afburden.burden import afb, e_af, five_number_summary
from afburden.classical import cross_validate, patient_folds
from afburden.config import RunConfig
from afburden.evaluation import auc, learning_curve, learning_curve_order, pick_threshold
from afburden.features import cosen, lorenz
from afburden.ingest import decode_mit_annotations, encode_mit_annotations
from afburden.neuralkit import (
    GruParams, as_tensor, concat, conv1d, dense, flatten, grad_check, gru_sequence, log_softmax,
    maxpool1d, parameter, relu, sigmoid, softmax, softmax_cross_entropy, tanh,
    weighted_cross_entropy)
from afburden.neuralkit.ops import log
from afburden.quality import bsqi
from afburden.windowing import SeverityGroup, severity_of

from test_arnet import jitter_biases, rr_windows
from test_evaluation import brute_f1, mann_whitney
from test_features import naive_cosen, random_windows
from test_ingest import GOLDEN, GOLDEN_EVENTS, random_events

GRAD_TOL = 1e-4
BENCH_SEED = 2024
BENCH_RECORDS = 200
# narrower CNN and smaller batches than the defaults keep the CPU benchmark short
BENCH_CONFIG = {"seed": BENCH_SEED, "deep": {"n_filt": 16, "n_hid": 32, "batch_size": 64}}


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, f"criterion {number}: {detail}"
    return emit


# -- 2: oracle equivalence ------------------------------------------------------------

def type7_quantile(values, q):
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def test_criterion_2_oracles(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    checks = {}

    windows = random_windows(rng, 120)
    checks["cosen"] = max(abs(cosen(w) - naive_cosen(w)) for w in windows)

    lorenz_ok = all(sum(lz["segment_counts"]) + lz["origin_count"] == 58
                    for lz in (lorenz(w) for w in windows))

    auc_err = 0.0
    for _ in range(50):
        n = int(rng.integers(5, 60))
        y = rng.random(n) < 0.4
        y[:2] = [True, False]
        s = np.round(rng.normal(size=n) + y, 1)
        auc_err = max(auc_err, abs(auc(s, y) - mann_whitney(s.tolist(), y.tolist())))
    checks["auc"] = auc_err

    q_err = 0.0
    for _ in range(50):
        v = rng.exponential(size=int(rng.integers(1, 40))).tolist()
        got = five_number_summary(v)
        want = [type7_quantile(v, q) for q in (0.0, 0.25, 0.5, 0.75, 1.0)]
        q_err = max(q_err, max(abs(a - b) for a, b in zip(got, want)))
    checks["quantiles"] = q_err

    f1_err = 0.0
    for _ in range(50):
        n = int(rng.integers(3, 40))
        y = rng.random(n) < 0.5
        y[0] = True
        s = np.round(rng.random(n), 1)
        scan = {t: brute_f1(s, y, t) for t in sorted(set(s.tolist()))}
        best = max(scan.values())
        lowest = min(t for t, f in scan.items() if f == best)
        t = pick_threshold(s, y)
        f1_err = max(f1_err, abs(brute_f1(s, y, t) - best), abs(t - lowest))
    checks["threshold_scan"] = f1_err

    elapsed = time.perf_counter() - t0
    ok = lorenz_ok and all(v <= 1e-12 for v in checks.values()) and elapsed < 60
    detail = ", ".join(f"{k} max err {v:.1e}" for k, v in checks.items())
    report(2, ok, f"{detail}, lorenz 58-point conservation {lorenz_ok}, {elapsed:.1f}s")


# -- 3: gradient checks ----------------------------------------------------------------

def op_gradient_errors(rng):
    errs = {}
    x = parameter(rng.normal(size=(3, 5)))
    x.data[np.abs(x.data) < 1e-2] += 0.1
    probe = rng.normal(size=(3, 5))
    for op in (relu, sigmoid, tanh, log_softmax, softmax):
        errs[op.__name__] = grad_check(lambda: (op(x) * probe).sum(), [x])
    pos = parameter(rng.uniform(0.5, 2.0, size=(3, 5)))
    errs["log"] = grad_check(lambda: (log(pos) * probe).sum(), [pos])

    a = parameter(rng.normal(size=(4, 3)))
    b = parameter(rng.normal(size=(3,)))
    c = parameter(rng.normal(size=(3, 2)))
    errs["arithmetic"] = grad_check(
        lambda: (((a * b - b) + 2.0) @ c).T.reshape(-1)[1:5].mean() + (1.0 - a).sum(axis=0).sum(),
        [a, b, c])

    xs = parameter(rng.normal(size=(2, 14, 3)))
    w = parameter(rng.normal(size=(4, 3, 5)))
    bias = parameter(rng.normal(size=(4,)))
    wd = parameter(rng.normal(size=(2, 21)))
    bd = parameter(rng.normal(size=(2,)))
    extra = parameter(rng.normal(size=(2, 1)))
    errs["conv/pool/dense/concat"] = grad_check(
        lambda: dense(concat([flatten(maxpool1d(conv1d(xs, w, bias)))[:, :20], extra]),
                      wd, bd).sum(), [xs, w, bias, wd, bd, extra])

    logits = parameter(rng.normal(size=(6, 2)))
    labels = np.array([0, 1, 1, 0, 1, 0])
    cw = np.array([0.7, 3.0])
    errs["softmax_ce"] = grad_check(lambda: softmax_cross_entropy(logits, labels, cw), [logits])
    errs["weighted_ce"] = grad_check(
        lambda: weighted_cross_entropy(softmax(logits), labels, cw), [logits])
    return errs


def test_criterion_3_gradients(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    errs = op_gradient_errors(rng)

    tiny = CnnModel(2, 4, seed=3)
    jitter_biases(tiny, rng)
    x = tiny.prepare(rr_windows(rng, 3, np.array([True, False, True])))
    y = np.array([1, 0, 1])
    errs["cnn_tiny_all_params"] = grad_check(
        lambda: softmax_cross_entropy(tiny.logits(x), y, [0.7, 2.0]), tiny.parameters())

    full = CnnModel(64, 128, seed=7)
    jitter_biases(full, rng)
    xf = full.prepare(rr_windows(rng, 2, np.array([True, False])))
    errs["cnn_64x128_sampled"] = grad_check(
        lambda: softmax_cross_entropy(full.logits(xf), y[:2]), full.parameters(),
        max_elements=25, rng=rng)

    p = GruParams.init(3, 4, rng)
    seq = parameter(rng.normal(size=(2, 10, 3)))
    probe = rng.normal(size=(2, 4))
    errs["gru_10_steps"] = grad_check(lambda: (gru_sequence(seq, p) * probe).sum(),
                                      dict(p.as_dict(), xs=seq))

    cnn = CnnModel(2, 4, seed=4)
    jitter_biases(cnn, rng)
    gru = GruClassifier(4, 3, seed=5)
    xc = cnn.prepare(rr_windows(rng, 6, np.array([0, 1, 1, 0, 1, 1], bool)))

    def composite():
        feats = cnn.features_tensor(as_tensor(xc)).reshape(2, 3, 4)
        return softmax_cross_entropy(gru.logits(feats), np.array([1, 0]))
    errs["cnn_gru_composite"] = grad_check(composite, {**cnn.parameters(), **gru.parameters()})

    elapsed = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < GRAD_TOL and elapsed < 300
    report(3, ok, f"{len(errs)} checks, worst {worst} rel err {errs[worst]:.1e}, "
                  f"{elapsed:.1f}s")


# -- 4: MIT annotation parser --------------------------------------------------------------

def test_criterion_4_parser(report):
    rng = np.random.default_rng(4)
    lists = [random_events(rng, int(rng.integers(0, 40))) for _ in range(1000)]
    round_trip = all(decode_mit_annotations(encode_mit_annotations(ev)) == ev for ev in lists)
    golden = decode_mit_annotations(GOLDEN) == GOLDEN_EVENTS
    report(4, round_trip and golden,
           f"1000 randomized round trips exact: {round_trip}; golden bytes decode: {golden}")


# -- 5: synthetic benchmark ------------------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    (root / "config.json").write_text(json.dumps(BENCH_CONFIG))
    w = root / "work"
    cfg = ["--config", str(root / "config.json")]
    t0 = time.perf_counter()
    steps = [["synth", "--n", str(BENCH_RECORDS), "--out", str(root / "corpus")],
             ["qc", str(root / "corpus"), "--workdir", str(w)],
             ["features", "--workdir", str(w)]]
    for model in ("gbt", "arnet"):
        steps += [["train", "--model", model, "--workdir", str(w)],
                  ["predict", "--model", model, "--workdir", str(w)],
                  ["eval", str(w / f"predictions_{model}_test.csv"), "--out", str(w / model)]]
    codes = [cli.run(cfg + s) for s in steps]
    elapsed = time.perf_counter() - t0
    out = {"codes": codes, "elapsed": elapsed, "workdir": w}
    for model in ("gbt", "arnet"):
        if (w / model / "metrics.json").exists():
            out[model] = {"f1": json.loads((w / model / "metrics.json").read_text())["f1"],
                          "af": json.loads((w / model / "abs_e_af.json").read_text())["AF"]}
    return out


def test_criterion_5_benchmark(benchmark, report):
    b = benchmark
    if any(b["codes"]):
        report(5, False, f"pipeline exit codes {b['codes']}")
    g, a = b["gbt"], b["arnet"]
    ok = (g["f1"] >= 0.90 and a["f1"] >= 0.90 and g["af"]["median"] <= 2.0
          and a["af"]["median"] <= 2.0 and a["af"]["median"] <= g["af"]["median"]
          and b["elapsed"] < 1800)
    report(5, ok, f"GBT F1 {g['f1']:.4f} median |E_AF| {g['af']['median']:.3f}; "
                  f"ArNet F1 {a['f1']:.4f} median |E_AF| {a['af']['median']:.3f} "
                  f"over {a['af']['n']} AF test patients; {b['elapsed']:.0f}s")


# -- 6: worked unit values ------------------------------------------------------------------------

def test_criterion_6_unit_values(report):
    rng = np.random.default_rng(6)
    checks = {"afb": afb([60, 60, 120], [True, False, True]) == 0.75}
    anti = zero = True
    for _ in range(200):
        n = int(rng.integers(1, 30))
        d = rng.uniform(30, 90, n)
        p, r = rng.random(n) < 0.5, rng.random(n) < 0.5
        anti &= abs(e_af(d, p, r) + e_af(d, r, p)) <= 1e-12
        zero &= e_af(d, p, p) == 0.0
    checks["e_af antisymmetry"] = anti
    checks["e_af zero at equality"] = zero
    cases = [((0.5, 29.999), SeverityGroup.NonAF), ((0.04, 30.0), SeverityGroup.Mild),
             ((0.0401, 30.0), SeverityGroup.Moderate), ((0.80, 100.0), SeverityGroup.Moderate),
             ((0.8001, 100.0), SeverityGroup.Severe), ((1.0, 29.0), SeverityGroup.NonAF)]
    checks["severity boundaries"] = all(severity_of(*args) is g for args, g in cases)
    ref = np.arange(1.0, 11.0)
    checks["bsqi examples"] = (bsqi(ref, ref) == 1.0 and bsqi(ref, ref + 0.4) == 0.0
                               and abs(bsqi(ref, np.delete(ref, 4)) - 0.9) <= 1e-12)
    failed = [k for k, v in checks.items() if not v]
    report(6, not failed, "all values as specified" if not failed else f"failed: {failed}")


# -- 7: determinism ---------------------------------------------------------------------------------

# the tiny corpus leaves some severity groups empty
@pytest.mark.filterwarnings("ignore:no training records in group")
def test_criterion_7_determinism(tmp_path, report):
    small = {"seed": 11, "classical": {"folds": 3, "lr_grid": {"C": [1.0, 10.0]},
                                       "tree_grid": {"max_depth": [3], "n_estimators": [20, 30]}},
             "deep": {"n_filt": 4, "n_hid": 8, "h": 3, "gru_units": 4, "epochs": 2}}
    (tmp_path / "cfg.json").write_text(json.dumps(small))
    cfg = ["--config", str(tmp_path / "cfg.json")]

    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes()
                for p in sorted(root.rglob("*")) if p.is_file()}

    runs = []
    for k in range(2):
        root = tmp_path / f"run{k}"
        w = root / "work"
        steps = [["synth", "--n", "8", "--duration", "3600", "--out", str(root / "corpus")],
                 ["qc", str(root / "corpus"), "--workdir", str(w)],
                 ["features", "--workdir", str(w)]]
        for model in pipeline.MODEL_KINDS:
            steps += [["train", "--model", model, "--workdir", str(w)],
                      ["predict", "--model", model, "--workdir", str(w), "--split", "all"]]
        codes = [cli.run(cfg + s) for s in steps]
        runs.append((codes, tree(root)))
    (c0, t0), (c1, t1) = runs
    differing = sorted(k for k in set(t0) | set(t1) if t0.get(k) != t1.get(k))
    ok = not any(c0 + c1) and not differing and len(t0) > 0
    report(7, ok, f"{len(t0)} artifacts from synth/qc/features/train/predict for "
                  f"{len(pipeline.MODEL_KINDS)} models; differing: {differing or 'none'}")


# -- 8: leakage guards ------------------------------------------------------------------------------

def test_criterion_8_leakage(benchmark, report):
    w = benchmark["workdir"]
    train, test, groups = pipeline.read_split(w)
    problems = []
    if set(train) & set(test):
        problems.append("train/test overlap")
    cfg = RunConfig.from_dict(BENCH_CONFIG)
    val = pipeline.validation_patients(train, groups, cfg)
    if not set(val) <= set(train):
        problems.append("validation patients outside training split")

    table = pipeline.read_features(w / pipeline.FEATURES_FILE)
    train_table = table.subset(train)
    if set(train_table.patient_ids.tolist()) & set(test):
        problems.append("test windows in training table")
    strata = pipeline.severity_strata(train, groups)
    folds = patient_folds(train, strata, 5, cfg.seed)
    flat = [p for f in folds for p in f]
    if len(flat) != len(set(flat)) or set(flat) != set(train):
        problems.append("patients span or miss CV folds")
    # fold assignment used by cross-validation is per patient, so windows follow patients
    sub = table.subset(train[:40])
    cv = cross_validate("lr", {"C": [1.0]}, sub.X, sub.y, sub.patient_ids,
                        pipeline.severity_strata(train[:40], groups), 5, cfg.seed)
    cv_flat = [p for f in cv.folds for p in f]
    if len(cv_flat) != len(set(cv_flat)):
        problems.append("cross-validation folds share patients")

    af = [p for p in train if groups[p] != SeverityGroup.NonAF]
    order = learning_curve_order(sorted(train), af, cfg.seed)
    seen = []
    curve = learning_curve(lambda subset: seen.append(list(subset)) or 0.0, sorted(train), af,
                           [5, 20, 60, len(train)], test, cfg.seed)
    nested = all(seen[i] == seen[i + 1][:len(seen[i])] for i in range(len(seen) - 1))
    if not nested or seen[-1] != order or len(curve) != 4:
        problems.append("learning-curve subsets not nested")
    if any(set(s) & set(test) for s in seen):
        problems.append("learning-curve subset touches test set")
    try:
        learning_curve(lambda s: 0.0, sorted(train) + test[:1], af, [5], test, cfg.seed)
        problems.append("overlapping learning-curve pool accepted")
    except ValueError:
        pass
    report(8, not problems, f"{len(train)} train / {len(test)} test patients, "
                            f"{len(val)} validation; "
                            + ("no leakage" if not problems else "; ".join(problems)))

"""End-to-end steps behind the CLI: QC, features, training, prediction, burden, evaluation.

Every step reads and writes plain CSV/JSON inside a work directory so that
each subcommand can run on its own. Outputs are byte-identical for identical
inputs and configuration.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import classical
from .arnet import ArNetBundle, ArNetConfig, CnnModel, train_arnet, train_cnn
from .arnet import predict as arnet_predict
from .burden import burden_report, summarize
from .config import RunConfig
from .errors import ValidationError
from .evaluation import (auc, fp_by_rhythm, learning_curve, metrics_at, pick_threshold,
                         roc_points)
from .features import FEATURE_NAMES, Standardizer, extract_matrix, fit_standardizer
from .ingest import PatientRecord, RhythmLabel, parse_canonical
from .neuralkit import load_checkpoint, save_checkpoint
from .quality import discard_reasons, gate_windows
from .windowing import SEVERITY_ORDER, SeverityGroup, Window, segment, severity_of, split

logger = logging.getLogger(__name__)

QUALITY_FILE = "quality.json"
WINDOWS_FILE = "windows.csv"
SPLIT_FILE = "split.json"
FEATURES_FILE = "features.csv"
MODEL_KINDS = ("threshold", "lr", "rf", "gbt", "cnn", "arnet")


def dump_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


# -- QC ------------------------------------------------------------------------

def load_records(directory) -> list[PatientRecord]:
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no canonical CSV records in {directory}")
    return [parse_canonical(f) for f in files]


@dataclass
class QcResult:
    reports: dict
    windows: dict
    groups: dict
    train: list
    test: list


def reference_group(windows: Sequence[Window], cfg: RunConfig) -> SeverityGroup:
    d = np.array([w.duration for w in windows])
    f = np.array([w.is_af for w in windows])
    if d.size == 0:
        return SeverityGroup.NonAF
    return severity_of(float(d[f].sum() / d.sum()), float(d[f].sum()), **asdict(cfg.severity))


def run_qc(records: Sequence[PatientRecord], cfg: RunConfig) -> QcResult:
    """Window, gate and split; discarded patients drop out entirely."""
    q = cfg.quality
    reports, windows, groups = {}, {}, {}
    for rec in records:
        wins = segment(rec, q.window_size, q.agreement_window)
        report, kept = gate_windows(rec, wins, max_missing_seconds=q.max_missing_seconds,
                                    bsqi_threshold=q.bsqi_threshold)
        reasons = discard_reasons(report, min_beats=q.min_beats,
                                  max_missing_fraction=q.max_missing_fraction,
                                  max_excluded_fraction=q.max_excluded_fraction)
        if not kept and not reasons:
            reasons = ["no analysable windows"]
        report = replace(report, patient_kept=not reasons, discard_reasons=reasons)
        reports[rec.patient_id] = report
        if report.patient_kept:
            windows[rec.patient_id] = kept
            groups[rec.patient_id] = reference_group(kept, cfg)
    kept_records = [r for r in records if r.patient_id in windows]
    train, test = split(kept_records, groups, cfg.test_fraction, cfg.seed)
    logger.info("qc: %d/%d patients kept, %d train / %d test", len(kept_records), len(records),
                len(train), len(test))
    return QcResult(reports, windows, groups, [r.patient_id for r in train],
                    [r.patient_id for r in test])


def write_windows(windows: Mapping[str, Sequence[Window]], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    size = None
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for pid in sorted(windows):
            for win in windows[pid]:
                if size is None:
                    size = win.rr.size
                    w.writerow(["patient_id", "index"] + [f"rr_{i}" for i in range(size)]
                               + ["label", "bsqi"])
                w.writerow([pid, win.index] + [repr(float(v)) for v in win.rr]
                           + [win.label.value, repr(float(win.bsqi))])
        if size is None:
            w.writerow(["patient_id", "index", "label", "bsqi"])


def read_windows(path) -> dict[str, list[Window]]:
    out: dict[str, list[Window]] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_rr = sum(h.startswith("rr_") for h in header)
        for row in reader:
            pid = row[0]
            out.setdefault(pid, []).append(Window(
                pid, int(row[1]), np.array(row[2:2 + n_rr], dtype=np.float64),
                RhythmLabel(row[2 + n_rr]), float(row[3 + n_rr])))
    return out


def write_qc(result: QcResult, workdir) -> None:
    workdir = Path(workdir)
    dump_json({"patients": [result.reports[p].to_dict() for p in sorted(result.reports)]},
              workdir / QUALITY_FILE)
    write_windows(result.windows, workdir / WINDOWS_FILE)
    dump_json({"train": sorted(result.train), "test": sorted(result.test),
               "groups": {p: str(g) for p, g in sorted(result.groups.items())}},
              workdir / SPLIT_FILE)


def read_split(workdir) -> tuple[list, list, dict]:
    d = load_json(Path(workdir) / SPLIT_FILE)
    return d["train"], d["test"], {p: SeverityGroup(g) for p, g in d["groups"].items()}


# -- features ---------------------------------------------------------------------

def write_features(windows: Mapping[str, Sequence[Window]], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "index", "label"] + list(FEATURE_NAMES))
        for pid in sorted(windows):
            X = extract_matrix(windows[pid])
            for win, row in zip(windows[pid], X):
                w.writerow([pid, win.index, win.label.value] + [repr(float(v)) for v in row])


@dataclass
class FeatureTable:
    patient_ids: np.ndarray
    indices: np.ndarray
    labels: np.ndarray
    X: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return (self.labels == RhythmLabel.AF.value).astype(np.int64)

    def subset(self, patients) -> "FeatureTable":
        m = np.isin(self.patient_ids, list(patients))
        return FeatureTable(self.patient_ids[m], self.indices[m], self.labels[m], self.X[m])


def read_features(path) -> FeatureTable:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[3:]) != FEATURE_NAMES:
            raise ValidationError(f"{path}: unexpected feature columns")
        rows = list(reader)
    if not rows:
        return FeatureTable(np.array([], str), np.array([], int), np.array([], str),
                            np.zeros((0, len(FEATURE_NAMES))))
    return FeatureTable(np.array([r[0] for r in rows]), np.array([int(r[1]) for r in rows]),
                        np.array([r[2] for r in rows]),
                        np.array([r[3:] for r in rows], dtype=np.float64))


# -- training -------------------------------------------------------------------------

def severity_strata(patients, groups: Mapping[str, SeverityGroup]) -> dict[str, str]:
    """Fold strata keyed by severity rank, so AF groups are dealt consecutively."""
    return {p: str(SEVERITY_ORDER.index(groups[p])) for p in patients}


def validation_patients(train: Sequence[str], groups: Mapping[str, SeverityGroup],
                        cfg: RunConfig) -> list[str]:
    """Severity-stratified patient hold-out taken from the training set."""
    k = max(2, int(round(1.0 / cfg.validation_fraction)))
    folds = classical.patient_folds(list(train), severity_strata(train, groups), k, cfg.seed)
    return folds[0]


def train_classical(kind: str, table: FeatureTable, groups: Mapping[str, SeverityGroup],
                    cfg: RunConfig) -> dict:
    """Standardise, select hyperparameters (or use fixed ones), fit, pick a threshold."""
    std = fit_standardizer(table.X)
    X = std.apply(table.X)
    y = table.y
    cc = cfg.classical
    strata = severity_strata(set(table.patient_ids.tolist()), groups)
    cv = None
    if kind == "threshold":
        grid = {"feature": list(range(X.shape[1]))}
    elif kind == "lr":
        grid = cc.lr_grid
    else:
        grid = cc.tree_grid
    if cc.cv:
        cv = classical.cross_validate(kind, grid, X, y, table.patient_ids, strata, cc.folds,
                                      cfg.seed)
        params, threshold = cv.params, cv.threshold
        model = classical.fit_model(kind, params, X, y, seed=cfg.seed)
    else:
        if kind == "threshold":
            params = {"feature": 0}
        else:
            params = dict(cc.lr_params if kind == "lr" else cc.tree_params)
        val = set(validation_patients(sorted(strata), groups, cfg))
        is_val = np.isin(table.patient_ids, list(val))
        model = classical.fit_model(kind, params, X[~is_val], y[~is_val], seed=cfg.seed)
        p_val = model.predict_proba(X[is_val])
        threshold = pick_threshold(p_val, y[is_val]) if np.any(y[is_val]) else 0.5
    return {"kind": kind, "params": params, "threshold": float(threshold),
            "standardizer": std.to_dict(), "model": model.to_dict(),
            "cv": cv.to_dict() if cv is not None else None}


def arnet_config(cfg: RunConfig) -> ArNetConfig:
    d = cfg.deep
    return ArNetConfig(d.n_filt, d.n_hid, d.h, d.gru_units, d.lr, d.batch_size, d.epochs,
                       d.patience, cfg.seed)


def train_deep(kind: str, windows: Mapping[str, Sequence[Window]], train: Sequence[str],
               groups: Mapping[str, SeverityGroup], cfg: RunConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    val = validation_patients(train, groups, cfg)
    sub = {p: windows[p] for p in train}
    ac = arnet_config(cfg)
    if kind == "arnet":
        bundle = train_arnet(sub, groups, val, ac)
        bundle.routing = asdict(cfg.severity)
        bundle.save(out_dir)
        return bundle.report
    fit_p = [p for p in sorted(sub) if p not in set(val)]
    rr = np.array([w.rr for p in fit_p for w in sub[p]])
    y = np.array([w.is_af for p in fit_p for w in sub[p]])
    vrr = np.array([w.rr for p in sorted(val) for w in sub[p]])
    vy = np.array([w.is_af for p in sorted(val) for w in sub[p]])
    model, report = train_cnn(rr, y, ac, vrr, vy)
    arrays, meta = model.state()
    save_checkpoint(out_dir / "cnn.ckpt", arrays, meta)
    dump_json({"kind": "cnn", "report": report}, out_dir / "manifest.json")
    return report


def train_model(kind: str, workdir, cfg: RunConfig, out_dir=None) -> Path:
    workdir = Path(workdir)
    out_dir = Path(out_dir) if out_dir else workdir / "models" / kind
    train, _, groups = read_split(workdir)
    if kind in ("cnn", "arnet"):
        windows = read_windows(workdir / WINDOWS_FILE)
        report = train_deep(kind, windows, train, groups, cfg, out_dir)
        dump_json({"kind": kind, "config_hash": cfg.digest(), "seed": cfg.seed,
                   "report": report}, out_dir / "model.json")
    elif kind in ("threshold", "lr", "rf", "gbt"):
        table = read_features(workdir / FEATURES_FILE).subset(train)
        art = train_classical(kind, table, groups, cfg)
        art.update({"config_hash": cfg.digest(), "seed": cfg.seed})
        dump_json(art, out_dir / "model.json")
    else:
        raise ValidationError(f"unknown model kind {kind!r}")
    return out_dir


# -- prediction ------------------------------------------------------------------------

PRED_HEADER = ["patient_id", "index", "duration", "label", "is_af", "prob", "threshold",
               "pred", "route"]


class Predictor:
    """Loads a trained model directory and scores one patient's windows."""

    def __init__(self, model_dir):
        model_dir = Path(model_dir)
        meta = load_json(model_dir / "model.json")
        self.kind = meta["kind"]
        if self.kind == "arnet":
            self.bundle = ArNetBundle.load(model_dir)
        elif self.kind == "cnn":
            self.cnn = CnnModel.from_state(*load_checkpoint(model_dir / "cnn.ckpt"))
        else:
            self.std = Standardizer.from_dict(meta["standardizer"])
            self.model = classical.model_from_dict(meta["model"])
            self.threshold = float(meta["threshold"])

    def __call__(self, windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray, str]:
        """(probabilities, per-window thresholds, route)."""
        n = len(windows)
        if self.kind == "arnet":
            pred = arnet_predict(self.bundle, windows)
            return pred.probs, np.full(n, pred.threshold), str(pred.route)
        if self.kind == "cnn":
            p = self.cnn.predict_proba(np.array([w.rr for w in windows]))
            return p, np.full(n, self.cnn.threshold), ""
        p = self.model.predict_proba(self.std.apply(extract_matrix(windows)))
        return p, np.full(n, self.threshold), ""


def predict_rows(predictor: Predictor, windows: Mapping[str, Sequence[Window]],
                 patients: Sequence[str]) -> list[list]:
    rows = []
    for pid in sorted(patients):
        ws = windows[pid]
        if not ws:
            continue
        probs, thr, route = predictor(ws)
        for w, p, t in zip(ws, probs, thr):
            rows.append([pid, w.index, w.duration, w.label.value, int(w.is_af), float(p),
                         float(t), int(p > t), route])
    return rows


def write_rows(rows, header, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def read_predictions(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["index"] = int(r["index"])
        r["duration"] = float(r["duration"])
        r["is_af"] = int(r["is_af"])
        r["prob"] = float(r["prob"])
        r["threshold"] = float(r["threshold"])
        r["pred"] = int(r["pred"])
    return rows


# -- burden and evaluation -----------------------------------------------------------------

BURDEN_HEADER = ["patient_id", "afb_pred", "afb_ref", "e_af", "abs_e_af", "group_ref",
                 "group_pred", "binary_pred", "n_windows"]


def burden_rows(pred_rows: Sequence[dict], cfg: RunConfig) -> list:
    by_patient: dict[str, list] = {}
    for r in pred_rows:
        by_patient.setdefault(r["patient_id"], []).append(r)
    out = []
    for pid in sorted(by_patient):
        rs = by_patient[pid]
        rep = burden_report(pid, [r["duration"] for r in rs], [r["pred"] for r in rs],
                            [r["is_af"] for r in rs], asdict(cfg.severity))
        out.append(rep)
    return out


def write_burden(reports, path) -> None:
    rows = [[r.patient_id, r.afb_pred, r.afb_ref, r.e_af, r.abs_e_af, str(r.group_ref),
             str(r.group_pred), int(r.binary_pred), r.n_windows] for r in reports]
    write_rows(rows, BURDEN_HEADER, path)


def read_burden(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("afb_pred", "afb_ref", "e_af", "abs_e_af"):
            r[k] = float(r[k])
        r["binary_pred"] = bool(int(r["binary_pred"]))
        r["n_windows"] = int(r["n_windows"])
    return rows


def error_summary(burden: Sequence[dict]) -> dict:
    """Five-number |E_AF| summaries per reference group, plus all AF patients."""
    by_group: dict[str, list] = {str(g): [] for g in SEVERITY_ORDER}
    for r in burden:
        by_group[r["group_ref"]].append(r["abs_e_af"])
    by_group["AF"] = [r["abs_e_af"] for r in burden
                      if r["group_ref"] != str(SeverityGroup.NonAF)]
    keys = ("min", "q1", "median", "q3", "max")
    return {g: dict(zip(keys, s), n=len(by_group[g])) for g, s in summarize(by_group).items()}


def evaluate(pred_rows: Sequence[dict], burden: Sequence[dict]) -> dict:
    y = np.array([r["is_af"] for r in pred_rows], bool)
    probs = np.array([r["prob"] for r in pred_rows])
    preds = np.array([r["pred"] for r in pred_rows], float)
    thr = np.array([r["threshold"] for r in pred_rows])
    m = metrics_at(preds, y, 0.5)
    single = float(thr[0]) if thr.size and np.all(thr == thr[0]) else None
    m = replace(m, auc=auc(probs, y) if y.size else None, threshold=single)
    fp = fp_by_rhythm(probs, [r["label"] for r in pred_rows], thr)
    binary_ref = [r["group_ref"] != str(SeverityGroup.NonAF) for r in burden]
    binary = metrics_at(np.array([r["binary_pred"] for r in burden], float),
                        np.array(binary_ref, bool), 0.5)
    out = {"window_metrics": m.to_dict(), "abs_e_af": error_summary(burden),
           "fp_by_rhythm": {k: v.to_dict() for k, v in fp.items()},
           "patient_binary": binary.to_dict()}
    if out["window_metrics"]["auc"] is not None and np.isnan(out["window_metrics"]["auc"]):
        out["window_metrics"]["auc"] = None
    return out


def roc_rows(pred_rows: Sequence[dict]) -> list:
    y = np.array([r["is_af"] for r in pred_rows], bool)
    fpr, tpr, thr = roc_points([r["prob"] for r in pred_rows], y)
    return [[float(a), float(b), float(t) if np.isfinite(t) else "inf"]
            for a, b, t in zip(fpr, tpr, thr)]


# -- learning curve --------------------------------------------------------------------------

def run_learning_curve(kind: str, table: FeatureTable, train: Sequence[str], test: Sequence[str],
                       groups: Mapping[str, SeverityGroup], sizes: Sequence[int],
                       cfg: RunConfig) -> list:
    """Window F1 on the test set for nested training subsets.

    Hyperparameters are fixed (no search); the decision threshold is 0.5 on
    the class-weighted model's probability.
    """
    if kind not in ("threshold", "lr", "rf", "gbt"):
        raise ValidationError("learning curves support the feature-based models only")
    af = [p for p in train if groups[p] != SeverityGroup.NonAF]
    test_t = table.subset(test)
    cc = cfg.classical

    def train_and_score(subset):
        sub = table.subset(subset)
        if sub.y.min(initial=1) == sub.y.max(initial=0):
            return 0.0
        std = fit_standardizer(sub.X)
        params = ({"feature": 0} if kind == "threshold"
                  else cc.lr_params if kind == "lr" else cc.tree_params)
        model = classical.fit_model(kind, params, std.apply(sub.X), sub.y, seed=cfg.seed)
        return metrics_at(model.predict_proba(std.apply(test_t.X)), test_t.y, 0.5).f1

    return learning_curve(train_and_score, sorted(train), af, sizes, test, cfg.seed)

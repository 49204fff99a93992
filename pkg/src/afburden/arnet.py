"""Window CNN, CNN feature extractor and the severity-routed GRU pool.

Inference for one patient: the CNN labels every window, the resulting burden
picks a severity group, and that group's GRU re-scores every window from the
sequence of CNN features ending at it.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .burden import afb as burden_afb
from .burden import af_seconds as burden_af_seconds
from .errors import ShapeError, ValidationError
from .evaluation import auc, metrics_at, pick_threshold
from .neuralkit import (
    Conv1d,
    Dense,
    Gru,
    Module,
    TrainConfig,
    as_tensor,
    class_weights_from_counts,
    fit,
    flatten,
    load_checkpoint,
    maxpool1d,
    relu,
    save_checkpoint,
    softmax,
    softmax_cross_entropy,
)
from .windowing import (
    MILD_MAX_BURDEN,
    MODERATE_MAX_BURDEN,
    NONAF_MAX_AF_SECONDS,
    SEVERITY_ORDER,
    WINDOW_SIZE,
    SeverityGroup,
    Window,
    severity_of,
)

logger = logging.getLogger(__name__)

KERNEL = 10
INFER_BATCH = 2048


def layer_shapes(n_filt: int, n_hid: int, window: int = WINDOW_SIZE, kernel: int = KERNEL) -> list:
    """(layer, output shape without batch) for the window CNN."""
    l1 = window - kernel + 1
    l2 = l1 - kernel + 1
    lp = l2 // 2
    l3 = lp - kernel + 1
    if l3 < 1:
        raise ShapeError(f"window of {window} too short for three kernels of {kernel}")
    return [("conv1", (l1, n_filt)), ("conv2", (l2, 2 * n_filt)), ("pool", (lp, 2 * n_filt)),
            ("conv3", (l3, 4 * n_filt)), ("flatten", (l3 * 4 * n_filt,)), ("fc1", (n_hid,)),
            ("fc2", (n_hid // 2,)), ("out", (2,))]


class CnnModel(Module):
    """Three valid convolutions (pool after the second), then n_hid -> n_hid/2 -> 2."""

    def __init__(self, n_filt: int = 64, n_hid: int = 128, seed: int = 0,
                 window: int = WINDOW_SIZE, kernel: int = KERNEL):
        if n_hid < 2 or n_hid % 2:
            raise ValidationError("n_hid must be an even number >= 2")
        rng = np.random.default_rng(seed)
        self.n_filt, self.n_hid, self.window, self.kernel = n_filt, n_hid, window, kernel
        flat = layer_shapes(n_filt, n_hid, window, kernel)[4][1][0]
        self.conv1 = Conv1d(1, n_filt, kernel, rng)
        self.conv2 = Conv1d(n_filt, 2 * n_filt, kernel, rng)
        self.conv3 = Conv1d(2 * n_filt, 4 * n_filt, kernel, rng)
        self.fc1 = Dense(flat, n_hid, rng)
        self.fc2 = Dense(n_hid, n_hid // 2, rng)
        self.out = Dense(n_hid // 2, 2, rng)
        self.rr_mean = np.zeros(window)
        self.rr_std = np.ones(window)
        self.threshold = 0.5

    def parameters(self):
        params = {}
        for name in ("conv1", "conv2", "conv3", "fc1", "fc2", "out"):
            for k, p in getattr(self, name).parameters().items():
                params[f"{name}.{k}"] = p
        return params

    def set_input_scaling(self, rr):
        rr = np.asarray(rr, dtype=np.float64)
        self.rr_mean = rr.mean(axis=0)
        std = rr.std(axis=0, ddof=1) if rr.shape[0] > 1 else np.ones(self.window)
        self.rr_std = np.where(std > 0, std, 1.0)

    def prepare(self, rr) -> np.ndarray:
        rr = np.asarray(rr, dtype=np.float64)
        if rr.ndim != 2 or rr.shape[1] != self.window:
            raise ShapeError(f"expected RR windows of shape (N, {self.window}), got {rr.shape}")
        return ((rr - self.rr_mean) / self.rr_std)[:, :, None]

    def features_tensor(self, x):
        h = relu(self.conv1(x))
        h = relu(self.conv2(h))
        h = maxpool1d(h, 2)
        h = relu(self.conv3(h))
        return relu(self.fc1(flatten(h)))

    def logits_from_features(self, f):
        return self.out(relu(self.fc2(f)))

    def logits(self, x):
        return self.logits_from_features(self.features_tensor(as_tensor(x)))

    def _batched(self, rr, fn):
        x = self.prepare(rr)
        if x.shape[0] == 0:
            return None
        return np.concatenate([fn(as_tensor(x[i:i + INFER_BATCH])).data
                               for i in range(0, x.shape[0], INFER_BATCH)])

    def predict_proba(self, rr) -> np.ndarray:
        out = self._batched(rr, lambda x: softmax(self.logits(x)))
        return np.zeros(0) if out is None else out[:, 1]

    def features(self, rr) -> np.ndarray:
        out = self._batched(rr, self.features_tensor)
        return np.zeros((0, self.n_hid)) if out is None else out

    def state(self) -> tuple[dict, dict]:
        arrays = dict(self.state_dict(), rr_mean=self.rr_mean, rr_std=self.rr_std)
        meta = {"n_filt": self.n_filt, "n_hid": self.n_hid, "window": self.window,
                "kernel": self.kernel, "threshold": self.threshold}
        return arrays, meta

    @classmethod
    def from_state(cls, arrays, meta) -> "CnnModel":
        model = cls(meta["n_filt"], meta["n_hid"], window=meta["window"], kernel=meta["kernel"])
        arrays = dict(arrays)
        model.rr_mean = arrays.pop("rr_mean")
        model.rr_std = arrays.pop("rr_std")
        model.load_state_dict(arrays)
        model.threshold = float(meta["threshold"])
        return model


class GruClassifier(Module):
    """GRU over a feature sequence; a dense layer on the last state gives 2 logits."""

    def __init__(self, n_in: int, n_units: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.n_in, self.n_units = n_in, n_units
        self.gru = Gru(n_in, n_units, rng)
        self.head = Dense(n_units, 2, rng)
        self.threshold = 0.5

    def parameters(self):
        params = {f"gru.{k}": p for k, p in self.gru.parameters().items()}
        params.update({f"head.{k}": p for k, p in self.head.parameters().items()})
        return params

    def logits(self, xs):
        return self.head(self.gru(as_tensor(xs)))

    def predict_proba(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape[0] == 0:
            return np.zeros(0)
        return np.concatenate([softmax(self.logits(xs[i:i + INFER_BATCH])).data[:, 1]
                               for i in range(0, xs.shape[0], INFER_BATCH)])

    def copy(self) -> "GruClassifier":
        twin = GruClassifier(self.n_in, self.n_units)
        twin.load_state_dict(self.state_dict())
        twin.threshold = self.threshold
        return twin


# -- sequences -----------------------------------------------------------------

def contiguous_runs(indices: Sequence[int]) -> list[tuple[int, int]]:
    """[start, stop) positions of runs whose window indices increase by one."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) != 1) + 1
    bounds = np.r_[0, breaks, idx.size]
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))


def sequence_index(indices: Sequence[int], h: int) -> np.ndarray:
    """(N, h) positions forming the length-h history of every window.

    Histories never cross a gap in window indices; a history that would start
    before its run is padded by repeating the run's first window.
    """
    if h < 1:
        raise ValidationError("history length h must be >= 1")
    n = len(indices)
    out = np.empty((n, h), dtype=np.int64)
    offsets = np.arange(h) - (h - 1)
    for lo, hi in contiguous_runs(indices):
        pos = np.arange(lo, hi)[:, None] + offsets[None, :]
        out[lo:hi] = np.maximum(pos, lo)
    return out


def build_sequences(features: np.ndarray, indices: Sequence[int], h: int) -> np.ndarray:
    return np.asarray(features)[sequence_index(indices, h)]


# -- configuration and bundle ------------------------------------------------------

@dataclass
class ArNetConfig:
    n_filt: int = 64
    n_hid: int = 128
    h: int = 10
    gru_units: int = 16
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    patience: int = 5
    seed: int = 0


@dataclass
class ArNetBundle:
    cnn: CnnModel
    grus: dict
    h: int
    feature_mean: np.ndarray
    feature_std: np.ndarray
    routing: dict = field(default_factory=lambda: {
        "nonaf_max_af_seconds": NONAF_MAX_AF_SECONDS, "mild_max_burden": MILD_MAX_BURDEN,
        "moderate_max_burden": MODERATE_MAX_BURDEN})
    report: dict = field(default_factory=dict)

    def route(self, afb: float, af_seconds: float) -> SeverityGroup:
        return severity_of(afb, af_seconds, **self.routing)

    def scaled_features(self, rr) -> np.ndarray:
        return (self.cnn.features(rr) - self.feature_mean) / self.feature_std

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays, meta = self.cnn.state()
        save_checkpoint(directory / "cnn.ckpt", arrays, meta)
        for g, model in self.grus.items():
            save_checkpoint(directory / f"gru_{g}.ckpt", model.state_dict(),
                            {"n_in": model.n_in, "n_units": model.n_units,
                             "threshold": model.threshold})
        manifest = {
            "h": self.h, "routing": self.routing, "feature_layer": "fc1",
            "cnn_threshold": self.cnn.threshold,
            "gru_thresholds": {str(g): m.threshold for g, m in self.grus.items()},
            "feature_mean": self.feature_mean.tolist(), "feature_std": self.feature_std.tolist(),
            "report": self.report,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True)
                                                 + "\n")

    @classmethod
    def load(cls, directory) -> "ArNetBundle":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        cnn = CnnModel.from_state(*load_checkpoint(directory / "cnn.ckpt"))
        grus = {}
        for g in SEVERITY_ORDER:
            arrays, meta = load_checkpoint(directory / f"gru_{g}.ckpt")
            model = GruClassifier(meta["n_in"], meta["n_units"])
            model.load_state_dict(arrays)
            model.threshold = float(meta["threshold"])
            grus[g] = model
        return cls(cnn, grus, int(manifest["h"]), np.asarray(manifest["feature_mean"]),
                   np.asarray(manifest["feature_std"]), manifest["routing"],
                   manifest.get("report", {}))


# -- training --------------------------------------------------------------------

def _f1_max(probs, labels) -> float:
    if probs.size == 0 or not np.any(labels):
        return 0.0
    return metrics_at(probs, labels, pick_threshold(probs, labels)).f1


def _fit_threshold(probs, labels) -> float:
    """F1-max threshold, or 0.5 when the validation set has no AF window."""
    if probs.size == 0 or not np.any(labels):
        return 0.5
    return pick_threshold(probs, labels)


def train_cnn(rr, labels, config: ArNetConfig, val_rr=None, val_labels=None,
              class_weights=None) -> tuple[CnnModel, dict]:
    """Train the window classifier; returns the model and a small report.

    With validation data, training stops early on validation F1 and the
    decision threshold is that set's F1-max point.
    """
    rr = np.asarray(rr, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if rr.shape[0] != y.size or rr.shape[0] == 0:
        raise ValidationError("need one label per training window")
    model = CnnModel(config.n_filt, config.n_hid, seed=config.seed)
    model.set_input_scaling(rr)
    x = model.prepare(rr)
    w = class_weights_from_counts(y) if class_weights is None else np.asarray(class_weights)
    has_val = val_rr is not None and len(val_rr) > 0
    if has_val:
        vy = np.asarray(val_labels).astype(bool)

    def batch_loss(idx):
        return softmax_cross_entropy(model.logits(x[idx]), y[idx], w)

    def validate():
        return _f1_max(model.predict_proba(val_rr), vy)

    tc = TrainConfig(config.lr, config.batch_size, config.epochs, config.patience, config.seed)
    hist = fit(model.parameters(), batch_loss, y.size, tc, validate if has_val else None)
    report = {"epochs_run": len(hist.losses), "best_epoch": hist.best_epoch,
              "final_loss": hist.losses[-1] if hist.losses else None}
    if has_val:
        p = model.predict_proba(val_rr)
        model.threshold = _fit_threshold(p, vy)
        m = metrics_at(p, vy, model.threshold, with_auc=True)
        report.update({"val_f1": m.f1, "val_auc": m.auc, "threshold": model.threshold})
    return model, report


def train_gru(seqs, labels, config: ArNetConfig, val_seqs=None, val_labels=None,
              seed: int | None = None) -> tuple[GruClassifier, dict]:
    seqs = np.asarray(seqs, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    model = GruClassifier(seqs.shape[2], config.gru_units,
                          seed=config.seed if seed is None else seed)
    w = class_weights_from_counts(y)
    has_val = val_seqs is not None and len(val_seqs) > 0
    if has_val:
        vy = np.asarray(val_labels).astype(bool)

    def batch_loss(idx):
        return softmax_cross_entropy(model.logits(seqs[idx]), y[idx], w)

    def validate():
        return _f1_max(model.predict_proba(val_seqs), vy)

    tc = TrainConfig(config.lr, config.batch_size, config.epochs, config.patience,
                     config.seed if seed is None else seed)
    # without positives F1 is meaningless, so early stopping would only stall
    use_val = has_val and bool(np.any(vy))
    hist = fit(model.parameters(), batch_loss, y.size, tc, validate if use_val else None)
    report = {"n_train": int(y.size), "n_train_af": int(y.sum()), "epochs_run": len(hist.losses)}
    if has_val:
        p = model.predict_proba(val_seqs)
        model.threshold = _fit_threshold(p, vy)
        if np.any(vy):
            m = metrics_at(p, vy, model.threshold, with_auc=True)
            report.update({"val_f1": m.f1, "val_auc": m.auc})
        else:
            report.update({"val_f1": None, "val_auc": None,
                           "note": "no AF windows in validation; F1 undefined"})
    return model, report


def _stack(windows_by_patient, patients):
    rr, y, parts = [], [], []
    for p in patients:
        ws = windows_by_patient[p]
        if not ws:
            continue
        rr.append(np.array([w.rr for w in ws]))
        y.append(np.array([w.is_af for w in ws]))
        parts.append((p, len(ws)))
    if not rr:
        return np.zeros((0, WINDOW_SIZE)), np.zeros(0, bool), parts
    return np.vstack(rr), np.concatenate(y), parts


def _group_sequences(bundle_feats, windows_by_patient, patients, h):
    seqs, labels = [], []
    for p in patients:
        ws = windows_by_patient[p]
        if not ws:
            continue
        seqs.append(build_sequences(bundle_feats[p], [w.index for w in ws], h))
        labels.append(np.array([w.is_af for w in ws]))
    if not seqs:
        return None, None
    return np.vstack(seqs), np.concatenate(labels)


def train_arnet(windows_by_patient: Mapping[str, Sequence[Window]],
                groups: Mapping[str, SeverityGroup], val_patients: Sequence[str],
                config: ArNetConfig = ArNetConfig()) -> ArNetBundle:
    """Train the CNN on all training windows, then one GRU per severity group.

    ``groups`` holds reference severity groups; ``val_patients`` (a subset of
    the keys) provide early stopping and decision thresholds.
    """
    val_set = set(val_patients)
    patients = sorted(windows_by_patient)
    fit_patients = [p for p in patients if p not in val_set]
    val_list = [p for p in patients if p in val_set]
    rr, y, _ = _stack(windows_by_patient, fit_patients)
    vrr, vy, _ = _stack(windows_by_patient, val_list)
    logger.info("training CNN on %d windows (%d AF), %d validation windows",
                y.size, int(y.sum()), vy.size)
    cnn, cnn_report = train_cnn(rr, y, config, vrr, vy)

    feats = {p: cnn.features(np.array([w.rr for w in windows_by_patient[p]]))
             if windows_by_patient[p] else np.zeros((0, config.n_hid)) for p in patients}
    train_feats = np.vstack([feats[p] for p in fit_patients if len(feats[p])])
    mean = train_feats.mean(axis=0)
    std = train_feats.std(axis=0, ddof=1) if train_feats.shape[0] > 1 else np.ones(config.n_hid)
    std = np.where(std > 0, std, 1.0)
    scaled = {p: (f - mean) / std for p, f in feats.items()}

    grus, reports = {}, {}
    for k, g in enumerate(SEVERITY_ORDER):
        tr = [p for p in fit_patients if groups[p] == g]
        va = [p for p in val_list if groups[p] == g]
        seqs, labels = _group_sequences(scaled, windows_by_patient, tr, config.h)
        if seqs is None:
            continue
        vseqs, vlabels = _group_sequences(scaled, windows_by_patient, va, config.h)
        logger.info("training %s GRU on %d sequences", g, labels.size)
        grus[g], reports[str(g)] = train_gru(seqs, labels, config, vseqs, vlabels,
                                             seed=config.seed + 1 + k)
    if SeverityGroup.NonAF not in grus:
        raise ValidationError("no NonAF training records; cannot build the GRU pool")
    for g in SEVERITY_ORDER:
        if g not in grus:
            warnings.warn(f"no training records in group {g}; reusing the NonAF GRU",
                          stacklevel=2)
            grus[g] = grus[SeverityGroup.NonAF].copy()
            reports[str(g)] = {"copied_from": "NonAF"}
    report = {"cnn": cnn_report, "gru": reports, "config": asdict(config)}
    return ArNetBundle(cnn, grus, config.h, mean, std, report=report)


# -- inference -------------------------------------------------------------------------

@dataclass
class ArNetPrediction:
    probs: np.ndarray
    route: SeverityGroup
    cnn_probs: np.ndarray
    cnn_afb: float
    cnn_af_seconds: float
    threshold: float

    @property
    def af_flags(self) -> np.ndarray:
        return self.probs > self.threshold


def cnn_route(bundle: ArNetBundle, durations, cnn_flags) -> tuple[SeverityGroup, float, float]:
    a = burden_afb(durations, cnn_flags)
    s = burden_af_seconds(durations, cnn_flags)
    return bundle.route(a, s), a, s


def predict(bundle: ArNetBundle, windows: Sequence[Window]) -> ArNetPrediction:
    """Four-stage inference over one patient's gated, ordered windows."""
    if not windows:
        raise ValidationError("no windows to classify")
    rr = np.array([w.rr for w in windows])
    durations = rr.sum(axis=1)
    cnn_probs = bundle.cnn.predict_proba(rr)
    route, a, s = cnn_route(bundle, durations, cnn_probs > bundle.cnn.threshold)
    seqs = build_sequences(bundle.scaled_features(rr), [w.index for w in windows], bundle.h)
    gru = bundle.grus[route]
    return ArNetPrediction(gru.predict_proba(seqs), route, cnn_probs, a, s, gru.threshold)


def cnn_window_report(bundle: ArNetBundle, windows: Sequence[Window]) -> dict:
    rr = np.array([w.rr for w in windows])
    y = np.array([w.is_af for w in windows])
    p = bundle.cnn.predict_proba(rr)
    m = metrics_at(p, y, bundle.cnn.threshold)
    return {"f1": m.f1, "auc": auc(p, y)}


__all__ = [
    "ArNetBundle", "ArNetConfig", "ArNetPrediction", "CnnModel", "GruClassifier",
    "build_sequences", "cnn_route", "contiguous_runs", "layer_shapes", "predict",
    "sequence_index", "train_arnet", "train_cnn", "train_gru",
]

"""Window-level metrics, ROC/AUC, F1-max thresholds, learning curves and FP analysis."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsReport:
    se: float
    sp: float
    ppv: float
    acc: float
    f1: float
    threshold: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    auc: float | None = None
    # names of ratios whose denominator was zero (reported as 0.0)
    undefined: tuple = ()

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return self.tp, self.fp, self.tn, self.fn

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError(f"scores {s.shape} and labels {y.shape} must be equal-length 1-D")
    return s, y


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics_at(scores, labels, threshold: float, with_auc: bool = False) -> MetricsReport:
    """Confusion-matrix statistics for the rule ``score > threshold``."""
    s, y = _check(scores, labels)
    pred = s > threshold
    tp = int(np.count_nonzero(pred & y))
    fp = int(np.count_nonzero(pred & ~y))
    tn = int(np.count_nonzero(~pred & ~y))
    fn = int(np.count_nonzero(~pred & y))
    undefined: list[str] = []
    se = _ratio(tp, tp + fn, "se", undefined)
    sp = _ratio(tn, tn + fp, "sp", undefined)
    ppv = _ratio(tp, tp + fp, "ppv", undefined)
    acc = _ratio(tp + tn, s.size, "acc", undefined)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, "f1", undefined)
    return MetricsReport(se=se, sp=sp, ppv=ppv, acc=acc, f1=f1, threshold=float(threshold),
                         tp=tp, fp=fp, tn=tn, fn=fn,
                         auc=auc(s, y) if with_auc else None, undefined=tuple(undefined))


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) from the strictest rule to the most permissive.

    The first point is (0, 0) at threshold +inf; each following point admits
    one more block of tied scores.
    """
    s, y = _check(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_block = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1] if s.size else np.array([], int)
    tps = np.cumsum(y)[last_of_block]
    fps = (last_of_block + 1) - tps
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    tpr = np.r_[0.0, tps / n_pos] if n_pos else np.r_[0.0, np.zeros(tps.size)]
    fpr = np.r_[0.0, fps / n_neg] if n_neg else np.r_[0.0, np.zeros(fps.size)]
    return fpr, tpr, np.r_[np.inf, s[last_of_block]]


def auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; NaN when a class is absent."""
    s, y = _check(scores, labels)
    if y.all() or not y.any():
        return float("nan")
    fpr, tpr, _ = roc_points(s, y)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def _f1_at_distinct(s, y):
    """F1 of ``score > t`` for every distinct score t, in ascending t order."""
    values = np.unique(s)
    order = np.argsort(s, kind="mergesort")
    ys = y[order]
    # positives predicted at threshold v are the samples strictly above v
    above = s.size - np.searchsorted(s[order], values, side="right")
    pos_cum = np.r_[0, np.cumsum(ys)]
    n_pos = int(y.sum())
    tp = n_pos - pos_cum[s.size - above]
    fp = above - tp
    fn = n_pos - tp
    den = 2 * tp + fp + fn
    f1 = np.where(den > 0, 2 * tp / np.maximum(den, 1), 0.0)
    return values, f1


def pick_threshold(scores, labels) -> float:
    """Distinct score value maximising F1 of ``score > t``; lowest on ties."""
    s, y = _check(scores, labels)
    if s.size == 0:
        raise ValidationError("cannot pick a threshold without scores")
    values, f1 = _f1_at_distinct(s, y)
    return float(values[int(np.argmax(f1))])


def learning_curve(train_and_score: Callable[[list], float], patients: Sequence[str],
                   af_patients, sizes: Sequence[int], test_patients=(), seed: int = 0
                   ) -> list[tuple[int, float]]:
    """Retrain on nested patient subsets of increasing size.

    Subsets alternate AF and non-AF patients (half/half) until one pool runs
    out, after which the other pool fills the remainder. ``train_and_score``
    receives the subset's patient ids and returns test F1.
    """
    patients = list(patients)
    overlap = set(patients) & set(test_patients)
    if overlap:
        raise ValidationError(f"training pool overlaps test set: {sorted(overlap)[:5]}")
    order = learning_curve_order(patients, af_patients, seed)
    curve = []
    for n in sizes:
        if n > len(order):
            raise ValidationError(f"requested {n} patients but only {len(order)} available")
        if n < 1:
            raise ValidationError("subset sizes must be >= 1")
        score = float(train_and_score(order[:n]))
        logger.info("learning curve: %d patients -> F1 %.4f", n, score)
        curve.append((int(n), score))
    return curve


def learning_curve_order(patients: Sequence[str], af_patients, seed: int = 0) -> list:
    """The patient ordering whose prefixes form the learning-curve subsets."""
    af_set = set(af_patients)
    rng = np.random.default_rng(seed)
    af = [p for p in patients if p in af_set]
    non = [p for p in patients if p not in af_set]
    af = [af[i] for i in rng.permutation(len(af))]
    non = [non[i] for i in rng.permutation(len(non))]
    order = []
    for a, b in zip(af, non):
        order += [a, b]
    k = min(len(af), len(non))
    return order + af[k:] + non[k:]


@dataclass(frozen=True)
class FpRow:
    rhythm: str
    n_windows: int
    n_fp: int
    rate: float
    prob_quartiles: tuple = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prob_quartiles"] = list(self.prob_quartiles)
        return d


def fp_by_rhythm(probs, rhythms: Sequence[str], threshold) -> dict[str, FpRow]:
    """False positives among non-AF windows, grouped by reference rhythm.

    ``threshold`` is a scalar or one value per window. Only rhythms with at
    least one false positive appear. Quartiles are of the AF probability over
    that rhythm's false positives.
    """
    p = np.asarray(probs, dtype=np.float64)
    r = np.asarray([str(x) for x in rhythms])
    if p.shape != r.shape:
        raise ValidationError(f"{p.size} probabilities for {r.size} windows")
    thr = np.broadcast_to(np.asarray(threshold, dtype=np.float64), p.shape)
    table = {}
    for rhythm in sorted(set(r.tolist()) - {"AF"}):
        mask = r == rhythm
        fp = p[mask] > thr[mask]
        n_fp = int(fp.sum())
        if n_fp == 0:
            continue
        q = np.quantile(p[mask][fp], [0.25, 0.5, 0.75])
        table[rhythm] = FpRow(rhythm, int(mask.sum()), n_fp, n_fp / int(mask.sum()),
                              tuple(float(v) for v in q))
    return table

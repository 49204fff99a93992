"""AF burden, burden estimation error and per-group summaries."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError
from .windowing import SeverityGroup, severity_of

BINARY_BURDEN_THRESHOLD = 0.04


def _durations_and_flags(durations, *flags):
    l = np.asarray(durations, dtype=np.float64)
    arrs = [np.asarray(f, dtype=bool) for f in flags]
    for a in arrs:
        if a.shape != l.shape:
            raise ValidationError(f"length mismatch: {a.shape[0] if a.ndim else 0} flags "
                                  f"for {l.shape[0] if l.ndim else 0} windows")
    if l.ndim != 1 or l.size == 0:
        raise ValidationError("burden is undefined without windows")
    if np.any(l <= 0):
        raise ValidationError("window durations must be > 0")
    return l, arrs


def afb(durations, af_flags) -> float:
    """Duration-weighted fraction of windows flagged AF."""
    l, (f,) = _durations_and_flags(durations, af_flags)
    return float(np.sum(l * f) / np.sum(l))


def af_seconds(durations, af_flags) -> float:
    l, (f,) = _durations_and_flags(durations, af_flags)
    return float(np.sum(l * f))


def e_af(durations, predicted, reference) -> float:
    """Signed burden error in percentage points (prediction minus reference)."""
    l, (p, r) = _durations_and_flags(durations, predicted, reference)
    return float(100.0 * np.sum(l * (p.astype(np.float64) - r.astype(np.float64))) / np.sum(l))


def binary_diagnosis(afb_pred: float, af_seconds_pred: float | None = None,
                     burden_threshold: float = BINARY_BURDEN_THRESHOLD) -> bool:
    """Patient-level AF call: predicted burden strictly above the threshold.

    ``af_seconds_pred`` is accepted for interface symmetry with the severity
    rule but does not enter the decision.
    """
    return bool(afb_pred > burden_threshold)


def severity_from_windows(durations, af_flags, **thresholds) -> SeverityGroup:
    return severity_of(afb(durations, af_flags), af_seconds(durations, af_flags), **thresholds)


def five_number_summary(values) -> tuple:
    """(min, Q1, median, Q3, max) with linearly interpolated quantiles."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("cannot summarise an empty list")
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return tuple(float(x) for x in q)


def summarize(abs_errors_by_group) -> dict:
    """Five-number summary of |E_AF| per group; empty groups are skipped."""
    return {str(g): five_number_summary(vals)
            for g, vals in abs_errors_by_group.items() if len(vals)}


@dataclass(frozen=True)
class BurdenReport:
    patient_id: str
    afb_pred: float
    afb_ref: float
    e_af: float
    abs_e_af: float
    group_ref: SeverityGroup
    group_pred: SeverityGroup
    binary_pred: bool
    n_windows: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group_ref"] = str(self.group_ref)
        d["group_pred"] = str(self.group_pred)
        return d


def burden_report(patient_id: str, durations, predicted, reference,
                  severity: dict | None = None) -> BurdenReport:
    err = e_af(durations, predicted, reference)
    pred_afb = afb(durations, predicted)
    return BurdenReport(
        patient_id=patient_id,
        afb_pred=pred_afb,
        afb_ref=afb(durations, reference),
        e_af=err,
        abs_e_af=abs(err),
        group_ref=severity_from_windows(durations, reference, **(severity or {})),
        group_pred=severity_from_windows(durations, predicted, **(severity or {})),
        binary_pred=binary_diagnosis(pred_afb),
        n_windows=len(durations),
    )

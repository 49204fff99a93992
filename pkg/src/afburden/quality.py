"""Signal-quality gating: beat agreement (bsqi) and window/patient exclusion."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .ingest import LABEL_CODE, PatientRecord, RhythmLabel

AGREEMENT_WINDOW = 0.05
BSQI_THRESHOLD = 0.8
MAX_MISSING_SECONDS = 10.0
MIN_BEATS = 1000
MAX_MISSING_FRACTION = 0.25
MAX_EXCLUDED_FRACTION = 0.75


def _as_sorted(values, name):
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size > 1 and np.any(np.diff(arr) < 0):
        raise ValidationError(f"{name} beats must be sorted")
    return arr


def match_count(ref, test, agreement_window: float = AGREEMENT_WINDOW) -> int:
    """Greedy chronological one-to-one matching between two sorted beat lists.

    Each reference beat, in time order, takes the nearest still-unmatched
    test beat within ``agreement_window`` seconds (earlier beat on ties).
    """
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.size == 0 or test.size == 0:
        return 0
    w = agreement_window
    slack = 1e-9 * w
    lo = np.searchsorted(test, ref - w - slack, side="left")
    hi = np.searchsorted(test, ref + w + slack, side="right")
    used = np.zeros(test.size, dtype=bool)
    count = 0
    test_list = test.tolist()
    for r, a, b in zip(ref.tolist(), lo.tolist(), hi.tolist()):
        best, best_d = -1, w
        for j in range(a, b):
            if used[j]:
                continue
            d = abs(test_list[j] - r)
            if d < best_d or (best < 0 and d <= w):
                best, best_d = j, d
        if best >= 0:
            used[best] = True
            count += 1
    return count


def bsqi(ref_beats, test_beats, agreement_window: float = AGREEMENT_WINDOW) -> float:
    """Beat agreement index: matched / (n_ref + n_test - matched).

    Returns 1.0 when both lists are empty.
    """
    if not agreement_window > 0:
        raise ValidationError(f"agreement_window must be > 0, got {agreement_window}")
    ref = _as_sorted(ref_beats, "reference")
    test = _as_sorted(test_beats, "test")
    if ref.size == 0 and test.size == 0:
        return 1.0
    matched = match_count(ref, test, agreement_window)
    return matched / (ref.size + test.size - matched)


@dataclass(frozen=True)
class QualityReport:
    patient_id: str
    n_beats: int
    n_windows: int
    pct_missing_windows: float
    pct_excluded_windows: float
    patient_kept: bool
    per_window_bsqi: list = field(default_factory=list)
    discard_reasons: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def unknown_seconds(record: PatientRecord, window) -> float:
    """Missing-annotation time in a window: the preceding RR of each
    UNKNOWN-labelled interval-terminating beat."""
    n = len(window.rr)
    codes = record.label_codes[window.start_beat + 1:window.start_beat + 1 + n]
    return float(np.sum(window.rr[codes == LABEL_CODE[RhythmLabel.UNKNOWN]]))


def gate_windows(record: PatientRecord, windows, *,
                 max_missing_seconds: float = MAX_MISSING_SECONDS,
                 bsqi_threshold: float = BSQI_THRESHOLD):
    """Drop windows with too much missing annotation or poor beat agreement.

    Returns ``(report, kept_windows)``; kept windows keep their order and
    record-relative indices. The bsqi rule only applies when the record has
    a second beat stream.
    """
    has_aux = record.aux_beat_times is not None
    kept, n_missing, n_excluded = [], 0, 0
    for win in windows:
        if unknown_seconds(record, win) > max_missing_seconds:
            n_missing += 1
            n_excluded += 1
        elif has_aux and win.bsqi < bsqi_threshold:
            n_excluded += 1
        else:
            kept.append(win)
    n = len(windows)
    report = QualityReport(
        patient_id=record.patient_id,
        n_beats=record.n_beats,
        n_windows=n,
        pct_missing_windows=n_missing / n if n else 0.0,
        pct_excluded_windows=n_excluded / n if n else 0.0,
        patient_kept=True,
        per_window_bsqi=[float(w.bsqi) for w in windows],
    )
    reasons = discard_reasons(report)
    return replace(report, patient_kept=not reasons, discard_reasons=reasons), kept


def discard_reasons(report: QualityReport, *, min_beats: int = MIN_BEATS,
                    max_missing_fraction: float = MAX_MISSING_FRACTION,
                    max_excluded_fraction: float = MAX_EXCLUDED_FRACTION) -> list:
    reasons = []
    if report.n_beats < min_beats:
        reasons.append(f"fewer than {min_beats} beats")
    if report.pct_missing_windows > max_missing_fraction:
        reasons.append("too many windows with missing annotations")
    if report.pct_excluded_windows > max_excluded_fraction:
        reasons.append("too many excluded windows")
    return reasons


def gate_patient(record: PatientRecord, report: QualityReport, **thresholds) -> bool:
    """True when the patient survives all discard rules."""
    if report.n_beats != record.n_beats:
        raise ValidationError("report does not belong to this record")
    return not discard_reasons(report, **thresholds)

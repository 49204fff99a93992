"""60-RR windowing, severity grouping and stratified patient splits."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .ingest import LABEL_ORDER, PatientRecord, RhythmLabel
from .quality import AGREEMENT_WINDOW, bsqi

WINDOW_SIZE = 60

# Tie-break order for the window majority label: pathology first.
LABEL_PRIORITY = (
    RhythmLabel.AF, RhythmLabel.SVTA, RhythmLabel.SBR, RhythmLabel.B,
    RhythmLabel.T, RhythmLabel.N, RhythmLabel.OTHER, RhythmLabel.UNKNOWN,
)
_PRIORITY_RANK = np.array([LABEL_PRIORITY.index(lab) for lab in LABEL_ORDER])

NONAF_MAX_AF_SECONDS = 30.0
MILD_MAX_BURDEN = 0.04
MODERATE_MAX_BURDEN = 0.80


class SeverityGroup(str, enum.Enum):
    NonAF = "NonAF"
    Mild = "Mild"
    Moderate = "Moderate"
    Severe = "Severe"

    def __str__(self):
        return self.value


SEVERITY_ORDER = tuple(SeverityGroup)


@dataclass(frozen=True, eq=False)
class Window:
    patient_id: str
    index: int
    rr: np.ndarray
    label: RhythmLabel
    bsqi: float = 1.0
    start_beat: int = 0
    start_time: float = 0.0

    def __post_init__(self):
        rr = np.array(self.rr, dtype=np.float64)
        if rr.ndim != 1 or not np.all(rr > 0):
            raise ValidationError("window RR intervals must be a positive 1-D array")
        rr.setflags(write=False)
        object.__setattr__(self, "rr", rr)
        object.__setattr__(self, "label", RhythmLabel(self.label))

    @property
    def duration(self) -> float:
        return float(np.sum(self.rr))

    @property
    def is_af(self) -> bool:
        return self.label is RhythmLabel.AF


def majority_label(codes: np.ndarray) -> RhythmLabel:
    counts = np.bincount(codes, minlength=len(LABEL_ORDER))
    tied = np.flatnonzero(counts == counts.max())
    return LABEL_ORDER[tied[np.argmin(_PRIORITY_RANK[tied])]]


def segment(record: PatientRecord, window_size: int = WINDOW_SIZE,
            agreement_window: float = AGREEMENT_WINDOW) -> list[Window]:
    """Cut a record into consecutive non-overlapping windows of RR intervals.

    The trailing partial window is discarded. Each window's label is the
    most common label among its interval-terminating beats. When the record
    carries a second beat stream, the window bsqi compares the beats spanned
    by the window against that stream; otherwise bsqi is 1.0.
    """
    times = record.beat_times
    rr = record.rr
    codes = record.label_codes
    aux = record.aux_beat_times
    n_windows = max(len(rr), 0) // window_size
    out = []
    for k in range(n_windows):
        s = k * window_size
        t0, t1 = times[s], times[s + window_size]
        q = 1.0
        if aux is not None:
            lo = np.searchsorted(aux, t0 - agreement_window, side="left")
            hi = np.searchsorted(aux, t1 + agreement_window, side="right")
            q = bsqi(times[s:s + window_size + 1], aux[lo:hi], agreement_window)
        out.append(Window(
            patient_id=record.patient_id,
            index=k,
            rr=rr[s:s + window_size],
            label=majority_label(codes[s + 1:s + window_size + 1]),
            bsqi=q,
            start_beat=s,
            start_time=float(t0),
        ))
    return out


def severity_of(afb: float, af_seconds: float, *,
                nonaf_max_af_seconds: float = NONAF_MAX_AF_SECONDS,
                mild_max_burden: float = MILD_MAX_BURDEN,
                moderate_max_burden: float = MODERATE_MAX_BURDEN) -> SeverityGroup:
    """Patient severity group from AF burden and total AF time.

    Boundaries: under 30 s of AF is NonAF; burden up to and including 4% is
    Mild, up to and including 80% Moderate, anything above Severe.
    """
    if not 0.0 <= afb <= 1.0:
        raise ValidationError(f"afb must be in [0, 1], got {afb}")
    if af_seconds < 0:
        raise ValidationError(f"af_seconds must be >= 0, got {af_seconds}")
    if af_seconds < nonaf_max_af_seconds:
        return SeverityGroup.NonAF
    if afb <= mild_max_burden:
        return SeverityGroup.Mild
    if afb <= moderate_max_burden:
        return SeverityGroup.Moderate
    return SeverityGroup.Severe


def split(records: Sequence[PatientRecord], groups: Mapping[str, SeverityGroup],
          test_fraction: float = 0.2, seed: int = 0):
    """Severity-stratified patient split.

    From every group, ``ceil(test_fraction * group_size)`` patients go to the
    test set, drawn only among reviewed records. Returns ``(train, test)``
    lists of records, each in input order.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ValidationError(f"test_fraction must be in [0, 1), got {test_fraction}")
    ids = [r.patient_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate patient ids")
    missing = [pid for pid in ids if pid not in groups]
    if missing:
        raise ValidationError(f"no severity group for patient {missing[0]!r}")

    rng = np.random.default_rng(seed)
    test_ids = set()
    for group in SEVERITY_ORDER:
        members = sorted((r for r in records if groups[r.patient_id] == group),
                         key=lambda r: r.patient_id)
        if not members:
            continue
        eligible = [r.patient_id for r in members if r.reviewed]
        n_test = math.ceil(test_fraction * len(members))
        if n_test and not eligible:
            warnings.warn(f"severity group {group} has no reviewed patients; "
                          "it is unrepresented in the test set", stacklevel=2)
            continue
        n_test = min(n_test, len(eligible))
        picks = rng.choice(len(eligible), size=n_test, replace=False)
        test_ids.update(eligible[i] for i in sorted(picks.tolist()))
    train = [r for r in records if r.patient_id not in test_ids]
    test = [r for r in records if r.patient_id in test_ids]
    return train, test

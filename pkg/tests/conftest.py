import numpy as np
import pytest

from afburden.ingest import PatientRecord, RhythmLabel


def make_record(rr, labels=None, patient_id="p0", start=0.0, **kw):
    rr = np.asarray(rr, dtype=float)
    times = start + np.concatenate(([0.0], np.cumsum(rr)))
    if labels is None:
        labels = [RhythmLabel.N] * len(times)
    elif len(labels) == len(rr):
        labels = [labels[0]] + list(labels)
    return PatientRecord(patient_id=patient_id, beat_times=times, labels=labels, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

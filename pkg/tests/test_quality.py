import numpy as np
import pytest

from afburden.errors import ValidationError
from afburden.ingest import RhythmLabel
from afburden.quality import QualityReport, bsqi, gate_patient, gate_windows, match_count
from afburden.windowing import Window, segment

from conftest import make_record


def max_matching(ref, test, w):
    """Maximum bipartite matching by augmenting paths (independent of the greedy)."""
    adj = [[j for j, t in enumerate(test) if abs(t - r) <= w] for r in ref]
    owner = [-1] * len(test)

    def augment(i, seen):
        for j in adj[i]:
            if j not in seen:
                seen.add(j)
                if owner[j] < 0 or augment(owner[j], seen):
                    owner[j] = i
                    return True
        return False

    return sum(augment(i, set()) for i in range(len(ref)))


def physiologic(rng, n):
    return np.cumsum(rng.uniform(0.3, 1.2, size=n))


def test_bsqi_examples():
    ref = np.arange(10) * 0.8
    assert bsqi(ref, ref) == 1.0
    assert bsqi(ref, ref + 0.4) == 0.0
    assert bsqi(ref, np.delete(ref, 4)) == pytest.approx(9 / (10 + 9 - 9))
    assert bsqi([], []) == 1.0
    assert bsqi(ref, []) == 0.0


def test_bsqi_boundary_and_validation():
    assert bsqi([1.0], [1.25], agreement_window=0.25) == 1.0
    assert bsqi([1.0], [1.0], agreement_window=0.25) == 1.0
    assert bsqi([1.0], [1.2501], agreement_window=0.25) == 0.0
    with pytest.raises(ValidationError):
        bsqi([2.0, 1.0], [1.0])
    with pytest.raises(ValidationError):
        bsqi([1.0], [1.0], agreement_window=0)


def test_greedy_matches_exhaustive_on_physiologic_lists(rng):
    for _ in range(300):
        ref = physiologic(rng, int(rng.integers(0, 12)))
        test = np.sort(np.concatenate([
            ref[rng.random(ref.size) > 0.2] + rng.normal(0, 0.02, size=0).sum(),
            rng.uniform(0, 12, size=int(rng.integers(0, 4)))]))
        test = np.sort(test + rng.normal(0, 0.02, size=test.size))
        assert match_count(ref, test, 0.05) == max_matching(ref.tolist(), test.tolist(), 0.05)


def test_bsqi_symmetric_on_jittered_pairs(rng):
    for _ in range(500):
        ref = physiologic(rng, int(rng.integers(1, 40)))
        keep = rng.random(ref.size) > 0.1
        test = ref[keep] + rng.uniform(-0.06, 0.06, size=int(keep.sum()))
        test = np.sort(np.concatenate([test, rng.uniform(0, ref[-1], size=int(rng.integers(0, 3)))]))
        a, b = bsqi(ref, test), bsqi(test, ref)
        assert a == b
        assert 0.0 <= a <= 1.0


def test_bsqi_decreases_as_matched_beats_are_deleted(rng):
    for _ in range(50):
        ref = physiologic(rng, 30)
        test = ref + rng.uniform(-0.04, 0.04, size=ref.size)
        order = rng.permutation(ref.size)
        prev = bsqi(ref, test)
        for k in range(1, ref.size + 1):
            cur = bsqi(ref, np.sort(np.delete(test, order[:k])))
            assert cur <= prev
            prev = cur


def _record_with_aux(n_beats=121, labels=None):
    rr = np.full(n_beats - 1, 0.8)
    rec = make_record(rr, labels=labels)
    return make_record(rr, labels=list(rec.labels), aux_beat_times=rec.beat_times.copy())


def test_gate_windows_bsqi_boundary():
    rec = _record_with_aux()
    wins = segment(rec)
    assert [w.bsqi for w in wins] == [1.0, 1.0]
    w0 = Window(rec.patient_id, 0, wins[0].rr, RhythmLabel.N, bsqi=0.79, start_beat=0)
    w1 = Window(rec.patient_id, 1, wins[1].rr, RhythmLabel.N, bsqi=0.80, start_beat=60)
    report, kept = gate_windows(rec, [w0, w1])
    assert [w.index for w in kept] == [1]
    assert report.pct_excluded_windows == 0.5
    assert report.pct_missing_windows == 0.0


def test_gate_windows_missing_annotations():
    labels = [RhythmLabel.N] * 121
    for i in range(1, 16):  # 15 beats * 0.8 s = 12 s missing in window 0
        labels[i] = RhythmLabel.UNKNOWN
    for i in range(61, 73):  # 12 beats = 9.6 s in window 1
        labels[i] = RhythmLabel.UNKNOWN
    rec = make_record(np.full(120, 0.8), labels=labels)
    report, kept = gate_windows(rec, segment(rec))
    assert [w.index for w in kept] == [1]
    assert report.pct_missing_windows == 0.5


def test_gate_windows_ignores_bsqi_without_aux():
    rec = make_record(np.full(120, 0.8))
    wins = [Window("p0", 0, np.full(60, 0.8), "N", bsqi=0.1)]
    _, kept = gate_windows(rec, wins)
    assert len(kept) == 1


def test_gate_windows_preserves_order(rng):
    rr = rng.uniform(0.5, 1.0, size=6000)
    rec = make_record(rr)
    aux = np.sort(np.concatenate([rec.beat_times[rng.random(rec.n_beats) > 0.1],
                                  rng.uniform(0, rec.beat_times[-1], 300)]))
    rec = make_record(rr, aux_beat_times=aux)
    wins = segment(rec)
    report, kept = gate_windows(rec, wins)
    idx = [w.index for w in kept]
    assert idx == sorted(set(idx))
    assert len(report.per_window_bsqi) == len(wins)


def _report(n_beats, missing, excluded):
    return QualityReport("p", n_beats, 100, missing, excluded, True)


def test_gate_patient_rules():
    rec = make_record(np.full(998, 0.8))
    assert rec.n_beats == 999
    assert not gate_patient(rec, _report(999, 0.0, 0.0))
    big = make_record(np.full(49_999, 0.8))
    assert not gate_patient(big, _report(50_000, 0.26, 0.3))
    assert gate_patient(big, _report(50_000, 0.10, 0.74))
    assert gate_patient(big, _report(50_000, 0.25, 0.75))
    assert not gate_patient(big, _report(50_000, 0.10, 0.76))

import filecmp

import numpy as np
import pytest

from afburden.errors import ValidationError
from afburden.ingest import RhythmLabel
from afburden.quality import bsqi
from afburden.synth import (
    RRProcess,
    SynthConfig,
    corrupt_beats,
    expected_af_fraction,
    generate,
    generate_corpus,
    stationary_distribution,
    write_corpus,
)


def ref_afb(rec):
    rr = rec.rr
    af = np.array([lab is RhythmLabel.AF for lab in rec.labels[1:]])
    return float(rr[af].sum() / rr.sum())


def test_no_af_transitions_gives_zero_burden():
    P = ((0.999, 0.0, 0.001), (0.5, 0.5, 0.0), (0.01, 0.0, 0.99))
    rec = generate(SynthConfig(duration=3600, transitions=P, initial_state=0, seed=3))
    assert ref_afb(rec) == 0.0


def test_absorbing_af_gives_full_burden():
    P = ((0.99, 0.01, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    rec = generate(SynthConfig(duration=3600, transitions=P, initial_state=1, seed=3))
    assert ref_afb(rec) == 1.0
    assert set(rec.labels) == {RhythmLabel.AF}


def test_mean_burden_matches_stationary_fraction():
    # tuned so the time-weighted stationary AF fraction is 30 %
    p_in = 1 / 3000
    means = (0.9, 0.7, 0.45)
    # beat occupancy ratio AF/NSR = p_in / p_out; time ratio scales by the means
    p_out = p_in * (0.7 / 0.9) * (0.7 / 0.3)
    P = ((1 - p_in, p_in, 0.0), (p_out, 1 - p_out, 0.0), (0.5, 0.0, 0.5))
    base = SynthConfig(duration=86400, transitions=P,
                       processes=tuple(RRProcess(m, s, r) for m, s, r in
                                       zip(means, (0.04, 0.15, 0.02), (0.8, 0.0, 0.0))))
    assert expected_af_fraction(base) == pytest.approx(0.30, abs=1e-9)
    afbs = [ref_afb(generate(SynthConfig(**{**base.__dict__, "seed": s}))) for s in range(100)]
    assert abs(100 * np.mean(afbs) - 30) <= 3


def test_stationary_distribution():
    P = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.5, 0.0, 0.5]])
    pi = stationary_distribution(P)
    assert np.allclose(pi @ P, pi) and pi.sum() == pytest.approx(1.0)


def test_record_invariants():
    rec = generate(SynthConfig(duration=1800, seed=11, ectopy_rate=0.05))
    assert np.all(np.diff(rec.beat_times) > 0)
    assert len(rec.labels) == rec.n_beats
    assert rec.beat_times[-1] <= 1800
    assert np.all((rec.rr >= 0.25) & (rec.rr <= 2.5))


def test_rr_statistics_per_state():
    P = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    for state, (m, s) in enumerate(((0.9, 0.04), (0.7, 0.15), (0.45, 0.02))):
        rr = generate(SynthConfig(duration=20000, transitions=P, initial_state=state,
                                  ectopy_rate=0.0, seed=5)).rr
        assert abs(rr.mean() - m) < 0.01
        assert abs(rr.std() - s) < 0.15 * s
    nsr = generate(SynthConfig(duration=20000, transitions=P, initial_state=0,
                               ectopy_rate=0.0, seed=5)).rr
    assert abs(np.corrcoef(nsr[:-1], nsr[1:])[0, 1] - 0.8) < 0.05


def test_invalid_config():
    with pytest.raises(ValidationError):
        SynthConfig(transitions=((0.5, 0.5, 0.1), (0, 1, 0), (0, 0, 1)))
    with pytest.raises(ValidationError):
        SynthConfig(processes=(RRProcess(0.1, 0.01), RRProcess(0.7, 0.1), RRProcess(0.45, 0.02)))
    with pytest.raises(ValidationError):
        SynthConfig(duration=-1)


def test_config_dict_round_trip():
    cfg = SynthConfig(seed=9, ectopy_rate=0.01)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == SynthConfig.from_dict(cfg.to_dict()).digest()


def test_corrupt_beats_identity_and_miss_rate():
    t = np.cumsum(np.full(20000, 0.8))
    same = corrupt_beats(t, 0, 0, 0, rng=1)
    assert np.array_equal(same, t) and bsqi(t, same) == 1.0
    missed = corrupt_beats(t, 0.1, 0, 0, rng=1)
    assert abs(bsqi(t, missed) - 0.9) <= 0.02


def test_heavy_jitter_breaks_agreement():
    t = np.cumsum(np.full(5000, 0.8))
    assert bsqi(t, corrupt_beats(t, 0, 0, 0.2, rng=2)) < 0.8


def test_corpus_is_byte_identical(tmp_path):
    write_corpus(generate_corpus(4, seed=7, base=SynthConfig(duration=600)), tmp_path / "a")
    write_corpus(generate_corpus(4, seed=7, base=SynthConfig(duration=600)), tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert len(cmp.same_files) == 9

"""Synthetic Holter-like RR records with known rhythm labels.

Rhythm states (NSR, AF, SVTA) follow a Markov chain over beats, so dwell
times are geometric in beats. Each state draws RR intervals from its own
stationary AR(1) process. This is a test harness with an easily learnable
AF class, not a physiological simulator.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ValidationError
from .ingest import PatientRecord, RhythmLabel, write_canonical

STATES = ("NSR", "AF", "SVTA")
STATE_LABELS = (RhythmLabel.N, RhythmLabel.AF, RhythmLabel.SVTA)
RR_CLIP = (0.25, 2.5)


@dataclass(frozen=True)
class RRProcess:
    mean: float
    sd: float
    rho: float = 0.0


def _default_transitions():
    # per-beat switching probabilities; mean dwell ~2000 / 1500 / 200 beats
    return ((1 - 1 / 3000 - 1 / 6000, 1 / 3000, 1 / 6000),
            (1 / 1500, 1 - 1 / 1500, 0.0),
            (1 / 200, 0.0, 1 - 1 / 200))


def _default_processes():
    return (RRProcess(0.9, 0.04, 0.8), RRProcess(0.7, 0.15, 0.0), RRProcess(0.45, 0.02, 0.0))


@dataclass(frozen=True)
class SynthConfig:
    duration: float = 7200.0
    transitions: tuple = field(default_factory=_default_transitions)
    processes: tuple = field(default_factory=_default_processes)
    ectopy_rate: float = 0.002
    ectopy_pattern: tuple = (0.6, 1.4)
    initial_state: int | None = None
    seed: int = 0

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=np.float64)
        if P.shape != (3, 3) or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
            raise ValidationError("transitions must be a 3x3 row-stochastic matrix")
        if len(self.processes) != 3:
            raise ValidationError("need one RR process per state")
        for name, p in zip(STATES, self.processes):
            if not p.mean > 0.2:
                raise ValidationError(f"{name}: mean RR must be > 0.2 s")
            if p.sd < 0 or not 0 <= p.rho < 1:
                raise ValidationError(f"{name}: need sd >= 0 and 0 <= rho < 1")
        if not self.duration > 0:
            raise ValidationError("duration must be > 0")
        if not 0 <= self.ectopy_rate <= 1:
            raise ValidationError("ectopy_rate must be a probability")
        if self.initial_state is not None and self.initial_state not in (0, 1, 2):
            raise ValidationError("initial_state must be 0, 1 or 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transitions"] = [list(r) for r in self.transitions]
        d["processes"] = [asdict(p) if isinstance(p, RRProcess) else p for p in self.processes]
        d["ectopy_pattern"] = list(self.ectopy_pattern)
        return d

    @classmethod
    def from_dict(cls, d) -> "SynthConfig":
        d = dict(d)
        if "transitions" in d:
            d["transitions"] = tuple(tuple(float(v) for v in r) for r in d["transitions"])
        if "processes" in d:
            d["processes"] = tuple(RRProcess(**p) for p in d["processes"])
        if "ectopy_pattern" in d:
            d["ectopy_pattern"] = tuple(d["ectopy_pattern"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def stationary_distribution(transitions) -> np.ndarray:
    """Left eigenvector of the transition matrix for eigenvalue 1.

    Reducible chains have several stationary distributions; the least-squares
    solution returned then is one of them.
    """
    P = np.asarray(transitions, dtype=np.float64)
    A = np.vstack([P.T - np.eye(3), np.ones(3)])
    pi, *_ = np.linalg.lstsq(A, np.r_[0.0, 0.0, 0.0, 1.0], rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def expected_af_fraction(config: SynthConfig) -> float:
    """Long-run fraction of time in AF: beat occupancy weighted by mean RR."""
    pi = stationary_distribution(config.transitions)
    means = np.array([p.mean for p in config.processes])
    return float(pi[1] * means[1] / np.dot(pi, means))


def _state_path(P, n, start, rng) -> np.ndarray:
    """Markov chain of length n via run lengths (geometric dwell per visit)."""
    states = np.empty(n, dtype=np.int8)
    i, s = 0, start
    while i < n:
        stay = P[s, s]
        run = n - i if stay >= 1.0 else int(rng.geometric(1.0 - stay))
        states[i:i + run] = s
        i += run
        if i >= n:
            break
        out = np.array(P[s], dtype=np.float64)
        out[s] = 0.0
        s = int(rng.choice(3, p=out / out.sum()))
    return states


def _ar1(n, rho, rng) -> np.ndarray:
    """Unit-variance stationary AR(1) sample path."""
    eps = rng.standard_normal(n)
    if rho == 0:
        return eps
    z0 = rng.standard_normal()
    y, _ = lfilter([np.sqrt(1 - rho * rho)], [1.0, -rho], eps, zi=[rho * z0])
    return y


def _rr_and_states(config: SynthConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    P = np.asarray(config.transitions, dtype=np.float64)
    pi = stationary_distribution(P)
    start = config.initial_state
    if start is None:
        start = int(rng.choice(3, p=pi))
    min_mean = min(p.mean for p in config.processes)
    n = int(config.duration / min(min_mean, RR_CLIP[1]) * 1.1) + 2
    states = _state_path(P, n, start, rng)
    rr = np.empty(n)
    for k, p in enumerate(config.processes):
        z = _ar1(n, p.rho, rng)
        sel = states == k
        rr[sel] = p.mean + p.sd * z[sel]
    ectopic = np.flatnonzero(rng.random(n - 1) < config.ectopy_rate)
    premature, compensatory = config.ectopy_pattern
    rr[ectopic] *= premature
    rr[ectopic + 1] *= compensatory
    np.clip(rr, *RR_CLIP, out=rr)
    return rr, states


def generate(config: SynthConfig, patient_id: str = "synth", reviewed: bool = True,
             aux: dict | None = None) -> PatientRecord:
    """One labelled record covering ``config.duration`` seconds.

    Beat 0 sits at t = 0; beat i > 0 ends interval i - 1 and carries that
    interval's state label. ``aux`` passes keyword arguments to
    :func:`corrupt_beats` to attach a second, noisier beat stream.
    """
    rng = np.random.default_rng(config.seed)
    rr, states = _rr_and_states(config, rng)
    times = np.concatenate(([0.0], np.cumsum(rr)))
    n_beats = int(np.searchsorted(times, config.duration, side="right"))
    times = times[:n_beats]
    beat_states = np.concatenate((states[:1], states[:n_beats - 1]))
    labels = [STATE_LABELS[s] for s in beat_states]
    aux_times = None
    if aux is not None:
        aux_times = corrupt_beats(times, rng=rng, **aux)
    return PatientRecord(patient_id, times, labels, reviewed=reviewed, aux_beat_times=aux_times)


def corrupt_beats(beat_times, miss_rate: float = 0.0, extra_rate: float = 0.0,
                  jitter_sd: float = 0.0, rng: np.random.Generator | int | None = None
                  ) -> np.ndarray:
    """Simulate a second detector: drop, add and jitter beats.

    ``extra_rate`` is in spurious beats per minute of record.
    """
    if isinstance(beat_times, PatientRecord):
        beat_times = beat_times.beat_times
    t = np.asarray(beat_times, dtype=np.float64)
    if not (0 <= miss_rate <= 1 and extra_rate >= 0 and jitter_sd >= 0):
        raise ValidationError("invalid corruption parameters")
    rng = np.random.default_rng(rng)
    kept = t[rng.random(t.size) >= miss_rate]
    if jitter_sd > 0:
        kept = kept + rng.normal(0.0, jitter_sd, kept.size)
    if t.size:
        span = t[-1] - t[0]
        n_extra = int(rng.poisson(extra_rate * span / 60.0))
        kept = np.concatenate((kept, rng.uniform(t[0], t[-1], n_extra)))
    return np.sort(np.clip(kept, 0.0, None))


# -- corpora -------------------------------------------------------------------

# Severity profiles: transition overrides giving NonAF / paroxysmal / persistent records.
PROFILES = {
    "nonaf": {"transitions": ((1 - 1 / 6000, 0.0, 1 / 6000), (1.0, 0.0, 0.0),
                              (1 / 200, 0.0, 1 - 1 / 200))},
    "mild": {"transitions": ((1 - 1 / 8000 - 1 / 6000, 1 / 8000, 1 / 6000),
                             (1 / 150, 1 - 1 / 150, 0.0), (1 / 200, 0.0, 1 - 1 / 200))},
    "moderate": {},
    "severe": {"transitions": ((1 - 1 / 200, 1 / 200, 0.0), (1 / 20000, 1 - 1 / 20000, 0.0),
                               (1 / 200, 0.0, 1 - 1 / 200)), "initial_state": 1},
}
PROFILE_ORDER = ("nonaf", "mild", "moderate", "severe")

DEFAULT_AUX = {"miss_rate": 0.002, "extra_rate": 0.05, "jitter_sd": 0.004}


def record_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def corpus_configs(n: int, seed: int = 0, base: SynthConfig | None = None) -> list[tuple]:
    """(patient_id, profile, config) for ``n`` records cycling through the profiles."""
    base = base or SynthConfig()
    out = []
    for i in range(n):
        profile = PROFILE_ORDER[i % len(PROFILE_ORDER)]
        cfg = replace(base, seed=record_seed(seed, i), **PROFILES[profile])
        out.append((f"syn{i:04d}", profile, cfg))
    return out


def generate_corpus(n: int, seed: int = 0, base: SynthConfig | None = None,
                    aux: dict | None = DEFAULT_AUX) -> list[tuple[PatientRecord, dict]]:
    """Records plus one manifest entry each."""
    out = []
    for pid, profile, cfg in corpus_configs(n, seed, base):
        rec = generate(cfg, pid, aux=aux)
        af = np.array([lab is RhythmLabel.AF for lab in rec.labels[1:]])
        rr = rec.rr
        ref = float(np.sum(rr[af]) / np.sum(rr)) if rr.size else 0.0
        out.append((rec, {"patient_id": pid, "profile": profile, "seed": cfg.seed,
                          "config_hash": cfg.digest(), "reference_afb": ref,
                          "n_beats": rec.n_beats}))
    return out


def write_corpus(corpus, out_dir) -> Path:
    """Canonical CSV + sidecar per record and a ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec, entry in corpus:
        write_canonical(rec, out_dir / f"{rec.patient_id}.csv")
        entries.append(entry)
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"records": entries}, indent=2, sort_keys=True) + "\n")
    return manifest

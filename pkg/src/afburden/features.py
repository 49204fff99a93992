"""Engineered RR-window features and their standardisation.

All functions take one window of RR intervals in seconds. Variances are
sample (n - 1) variances throughout.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

COSEN_M = 2
COSEN_R = 0.03
# Returned when no length-m template pair matches at all.
COSEN_CAP = 10.0


class FeatureVector(NamedTuple):
    cosen: float
    afev: float
    irrev: float
    pacev: float
    origin_count: float
    poinc_sd1: float
    poinc_sd2: float
    min_rr: float
    med_hr: float
    avnn: float
    sdnn: float
    sem: float
    pnn20: float
    pnn50: float
    rmssd: float
    cv: float
    pip: float
    ials: float
    pss: float
    pas: float
    bsqi: float


FEATURE_NAMES = FeatureVector._fields


def time_domain(rr) -> dict:
    rr = np.asarray(rr, dtype=np.float64)
    diffs = np.diff(rr)
    avnn = float(np.mean(rr))
    sdnn = float(np.std(rr, ddof=1))
    return {
        "min_rr": float(np.min(rr)),
        "med_hr": float(np.median(60.0 / rr)),
        "avnn": avnn,
        "sdnn": sdnn,
        "sem": sdnn / np.sqrt(rr.size),
        "pnn20": 100.0 * float(np.mean(np.abs(diffs) > 0.020)),
        "pnn50": 100.0 * float(np.mean(np.abs(diffs) > 0.050)),
        "rmssd": float(np.sqrt(np.mean(diffs ** 2))),
        "cv": sdnn / avnn,
    }


def template_matches(rr, m: int = COSEN_M, r: float = COSEN_R) -> tuple[int, int]:
    """Return ``(A, B)``: matching template pairs of length m+1 and m.

    Both counts use the same N - m starting positions, so every length-m
    template considered has a length-(m+1) extension. Pairs are unordered,
    self-matches excluded, Chebyshev distance <= r.
    """
    rr = np.asarray(rr, dtype=np.float64)
    nt = rr.size - m
    if nt < 2:
        return 0, 0
    tm = sliding_window_view(rr, m)[:nt]
    dist = np.abs(tm[:, None, :] - tm[None, :, :]).max(axis=-1)
    tail = rr[m:m + nt]
    dist_ext = np.maximum(dist, np.abs(tail[:, None] - tail[None, :]))
    iu = np.triu_indices(nt, 1)
    return int(np.count_nonzero(dist_ext[iu] <= r)), int(np.count_nonzero(dist[iu] <= r))


def cosen(rr, m: int = COSEN_M, r: float = COSEN_R) -> float:
    """Coefficient of sample entropy.

    -ln(A/B) - ln(2r) - ln(mean RR). A zero A is replaced by 0.5; a zero B
    (no match at all) returns ``COSEN_CAP``.
    """
    a, b = template_matches(rr, m, r)
    if b == 0:
        return COSEN_CAP
    if a == 0:
        a = 0.5
    return float(-np.log(a / b) - np.log(2 * r) - np.log(np.mean(rr)))


@dataclass(frozen=True)
class LorenzConfig:
    """Geometry of the increment (Lorenz) plot, all in milliseconds."""
    origin_half_width: float = 80.0
    near_limit: float = 300.0
    cell_size: float = 40.0
    clip: float = 600.0
    pacev_segments: tuple = (2, 4, 6, 8)


DEFAULT_LORENZ = LorenzConfig()


def lorenz_points(rr) -> tuple[np.ndarray, np.ndarray]:
    """Points (dRR_i, dRR_{i-1}) in ms, unclipped."""
    d = np.diff(np.asarray(rr, dtype=np.float64)) * 1000.0
    return d[1:], d[:-1]


def lorenz_segments(x, y, config: LorenzConfig = DEFAULT_LORENZ) -> np.ndarray:
    """Segment id per point: 0 for the origin bin, 1-12 otherwise.

    1-4 are the axis bands (+x, +y, -x, -y); 5-8 the near quadrants and 9-12
    the far quadrants, both numbered counter-clockwise from (+, +).
    """
    x = np.clip(np.asarray(x, dtype=np.float64), -config.clip, config.clip)
    y = np.clip(np.asarray(y, dtype=np.float64), -config.clip, config.clip)
    ax, ay = np.abs(x), np.abs(y)
    o = config.origin_half_width
    seg = np.zeros(x.shape, dtype=np.int64)
    origin = (ax <= o) & (ay <= o)
    on_x_axis = ~origin & (ay <= o)
    on_y_axis = ~origin & (ax <= o)
    seg[on_x_axis] = np.where(x[on_x_axis] > 0, 1, 3)
    seg[on_y_axis] = np.where(y[on_y_axis] > 0, 2, 4)
    quad = ~origin & ~on_x_axis & ~on_y_axis
    q = np.select([(x > 0) & (y > 0), (x < 0) & (y > 0), (x < 0) & (y < 0)], [0, 1, 2], 3)
    far = np.maximum(ax, ay) > config.near_limit
    seg[quad & ~far] = 5 + q[quad & ~far]
    seg[quad & far] = 9 + q[quad & far]
    return seg


def lorenz(rr, config: LorenzConfig = DEFAULT_LORENZ) -> dict:
    x, y = lorenz_points(rr)
    seg = lorenz_segments(x, y, config)
    origin_count = int(np.count_nonzero(seg == 0))
    counts = np.bincount(seg, minlength=13)
    pacev = int(sum(counts[s] for s in config.pacev_segments))

    outer = seg > 0
    n_cells = int(round(2 * config.clip / config.cell_size))
    cx = np.clip(np.floor((np.clip(x[outer], -config.clip, config.clip) + config.clip)
                          / config.cell_size), 0, n_cells - 1).astype(np.int64)
    cy = np.clip(np.floor((np.clip(y[outer], -config.clip, config.clip) + config.clip)
                          / config.cell_size), 0, n_cells - 1).astype(np.int64)
    irrev = int(np.unique(cx * n_cells + cy).size)

    afev = int(counts[1:].sum()) - origin_count - 2 * pacev
    return {"afev": afev, "irrev": irrev, "pacev": pacev, "origin_count": origin_count,
            "segment_counts": counts[1:].tolist()}


def poincare(rr) -> dict:
    """SD1/SD2 of the (RR_i, RR_{i+1}) cloud along the 45-degree axes.

    SD2 uses the variances of the two lagged series, which makes it the exact
    standard deviation of the along-identity coordinate.
    """
    rr = np.asarray(rr, dtype=np.float64)
    sd1_sq = np.var(np.diff(rr), ddof=1) / 2.0
    lag_var = np.var(rr[:-1], ddof=1) + np.var(rr[1:], ddof=1)
    return {"poinc_sd1": float(np.sqrt(sd1_sq)),
            "poinc_sd2": float(np.sqrt(max(lag_var - sd1_sq, 0.0)))}


def _run_lengths(breaks: np.ndarray, n: int) -> np.ndarray:
    starts = np.concatenate(([0], np.flatnonzero(breaks) + 1, [n]))
    return np.diff(starts)


def fragmentation(rr) -> dict:
    """Heart-rate fragmentation indices on the sign sequence of increments."""
    d = np.diff(np.asarray(rr, dtype=np.float64))
    s = np.sign(d)
    nonzero = np.flatnonzero(s)
    if nonzero.size == 0:
        return {"pip": 0.0, "ials": 0.0, "pss": 0.0, "pas": 0.0}
    # zero increments inherit the previous non-zero sign
    last = np.maximum.accumulate(np.where(s != 0, np.arange(s.size), 0))
    filled = s[last]
    filled[:nonzero[0]] = s[nonzero[0]]

    n = filled.size
    inflection = filled[1:] != filled[:-1]
    runs = _run_lengths(inflection, n)
    alternations = _run_lengths(~inflection, n)
    return {
        "pip": 100.0 * np.count_nonzero(inflection) / n,
        "ials": runs.size / n,
        "pss": 100.0 * runs[runs < 3].sum() / n,
        "pas": 100.0 * alternations[alternations >= 4].sum() / n,
    }


def extract_rr(rr, bsqi: float = 1.0, lorenz_config: LorenzConfig = DEFAULT_LORENZ) -> FeatureVector:
    vals = {"cosen": cosen(rr), "bsqi": float(bsqi)}
    lz = lorenz(rr, lorenz_config)
    vals.update({k: float(lz[k]) for k in ("afev", "irrev", "pacev", "origin_count")})
    vals.update(poincare(rr))
    vals.update(time_domain(rr))
    vals.update(fragmentation(rr))
    return FeatureVector(**{k: float(vals[k]) for k in FEATURE_NAMES})


def extract(window, lorenz_config: LorenzConfig = DEFAULT_LORENZ) -> FeatureVector:
    return extract_rr(window.rr, window.bsqi, lorenz_config)


def extract_matrix(windows: Sequence, lorenz_config: LorenzConfig = DEFAULT_LORENZ) -> np.ndarray:
    if not windows:
        return np.empty((0, len(FEATURE_NAMES)))
    return np.array([extract(w, lorenz_config) for w in windows], dtype=np.float64)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    names: tuple = field(default=FEATURE_NAMES)

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.size == 0:
            return X.reshape(0, self.mean.size)
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64), tuple(d["names"]))


def fit_standardizer(X, names: Sequence[str] = FEATURE_NAMES) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two training vectors to standardise")
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    flat = ~(std > 0)
    if np.any(flat):
        which = [names[i] if i < len(names) else str(i) for i in np.flatnonzero(flat)]
        warnings.warn(f"zero-variance features {which}; using unit scale", stacklevel=2)
        std = np.where(flat, 1.0, std)
    return Standardizer(mean, std, tuple(names))


def apply_standardizer(standardizer: Standardizer, X) -> np.ndarray:
    return standardizer.apply(X)

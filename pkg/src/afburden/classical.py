"""Feature-based window classifiers and patient-level cross-validation.

Models: single-feature threshold rule, class-weighted logistic regression,
random forest (weighted Gini) and second-order gradient-boosted trees. Every
model exposes ``predict_proba(X) -> P(AF)`` and a JSON round trip.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConvergenceError, ValidationError
from .evaluation import auc, metrics_at, pick_threshold
from .neuralkit.ops import class_weights_from_counts

logger = logging.getLogger(__name__)

LR_GRID = {"C": [0.1, 1.0, 10.0, 100.0, 1000.0]}
TREE_GRID = {"max_depth": [3, 4, 5, 6], "n_estimators": [70, 80, 90, 100, 110, 120]}


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValidationError(f"X {X.shape} and y {y.shape} are inconsistent")
    return X, y


def sample_weights(y, class_weights=None) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    cw = class_weights_from_counts(y) if class_weights is None else np.asarray(class_weights, float)
    return cw[y]


def _require_both_classes(y):
    if y.size == 0 or y.min() == y.max():
        raise ValidationError("training labels contain a single class")


# -- threshold rule -----------------------------------------------------------

@dataclass(frozen=True)
class ThresholdRule:
    """``x > threshold`` (direction +1) or ``x < threshold`` (direction -1) means AF."""
    threshold: float
    direction: int
    f1: float
    degenerate: bool = False
    feature: int = 0
    scale: float = 1.0

    def predict(self, X) -> np.ndarray:
        x = np.asarray(X, dtype=np.float64)
        x = x[:, self.feature] if x.ndim == 2 else x
        return self.direction * (x - self.threshold) > 0

    def predict_proba(self, X) -> np.ndarray:
        x = np.asarray(X, dtype=np.float64)
        x = x[:, self.feature] if x.ndim == 2 else x
        return _sigmoid(self.direction * (x - self.threshold) / self.scale)

    def to_dict(self) -> dict:
        return {"kind": "threshold", "threshold": self.threshold, "direction": self.direction,
                "f1": self.f1, "degenerate": self.degenerate, "feature": self.feature,
                "scale": self.scale}


def _rule_f1(x, y, t, direction):
    pred = direction * (x - t) > 0
    tp = np.count_nonzero(pred & y)
    den = 2 * tp + np.count_nonzero(pred & ~y) + np.count_nonzero(~pred & y)
    return 0.0 if den == 0 else 2 * tp / den


def threshold_candidates(x) -> np.ndarray:
    """Midpoints between sorted unique values plus one point beyond each end."""
    u = np.unique(np.asarray(x, dtype=np.float64))
    return np.concatenate(([u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]))


def fit_threshold(values, labels, feature: int = 0) -> ThresholdRule:
    """F1-maximising cut on one feature, scanning both directions.

    Ties go to the first candidate in (direction +1, ascending threshold)
    order, then direction -1.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if x.size == 0 or x.shape != y.shape:
        raise ValidationError("need equal-length, non-empty values and labels")
    u = np.unique(x)
    scale = float(np.std(x)) or 1.0
    if u.size == 1:
        return ThresholdRule(float(u[0]), 1, _rule_f1(x, y, u[0], 1), True, feature, scale)
    cands = threshold_candidates(x)
    xs = np.sort(x)
    ys = y[np.argsort(x, kind="mergesort")]
    n_pos = int(y.sum())
    pos_cum = np.r_[0, np.cumsum(ys)]
    n_le = np.searchsorted(xs, cands, side="right")
    n_lt = np.searchsorted(xs, cands, side="left")
    best = (-1.0, 0.0, 1)
    for direction in (1, -1):
        if direction == 1:
            tp = n_pos - pos_cum[n_le]
            npred = x.size - n_le
        else:
            tp = pos_cum[n_lt]
            npred = n_lt
        fp = npred - tp
        fn = n_pos - tp
        den = 2 * tp + fp + fn
        f1 = np.where(den > 0, 2 * tp / np.maximum(den, 1), 0.0)
        i = int(np.argmax(f1))
        if f1[i] > best[0]:
            best = (float(f1[i]), float(cands[i]), direction)
    return ThresholdRule(best[1], best[2], best[0], False, feature, scale)


def fit_threshold_model(X, y, feature: int) -> ThresholdRule:
    X, y = _xy(X, y)
    return fit_threshold(X[:, feature], y, feature)


# -- logistic regression -----------------------------------------------------------

@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float
    C: float

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        return {"kind": "lr", "weights": self.weights.tolist(), "bias": self.bias, "C": self.C}


def logistic_objective(w, b, X, y, s, C) -> tuple[float, np.ndarray, float]:
    """Weighted cross-entropy plus ``(1/C) * |w|^2 / 2``; returns (value, dw, db)."""
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = np.logaddexp(0.0, z) - y * z
    r = s * (_sigmoid(z) - y)
    value = float(np.dot(s, loss) + 0.5 * np.dot(w, w) / C)
    return value, X.T @ r + w / C, float(r.sum())


def fit_logistic(X, y, class_weights=None, C: float = 1.0, tol: float = 1e-6,
                 max_iter: int = 200) -> LinearModel:
    """Newton's method with backtracking; stops when the gradient norm < ``tol``."""
    X, y = _xy(X, y)
    _require_both_classes(y)
    if not C > 0:
        raise ValidationError("C must be > 0")
    s = sample_weights(y, class_weights)
    yf = y.astype(np.float64)
    d = X.shape[1]
    w = np.zeros(d)
    # start the bias at the weighted prior log-odds
    b = float(np.log(np.dot(s, yf) / np.dot(s, 1 - yf)))
    value, gw, gb = logistic_objective(w, b, X, yf, s, C)
    gnorm = float(np.sqrt(np.dot(gw, gw) + gb * gb))
    for _ in range(max_iter):
        if gnorm < tol:
            break
        p = _sigmoid(X @ w + b)
        q = s * p * (1 - p)
        Xa = np.hstack([X, np.ones((X.shape[0], 1))])
        H = Xa.T @ (Xa * q[:, None])
        H[np.arange(d), np.arange(d)] += 1.0 / C
        g = np.r_[gw, gb]
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            w_new, b_new = w - t * step[:d], b - t * step[d]
            v_new, gw_new, gb_new = logistic_objective(w_new, b_new, X, yf, s, C)
            if v_new <= value - 1e-4 * t * np.dot(g, step) or t < 1e-10:
                break
            t *= 0.5
        w, b, value, gw, gb = w_new, b_new, v_new, gw_new, gb_new
        gnorm = float(np.sqrt(np.dot(gw, gw) + gb * gb))
    if gnorm >= tol:
        raise ConvergenceError(f"logistic regression did not converge in {max_iter} iterations",
                               gnorm)
    return LinearModel(w, float(b), float(C))


# -- trees ---------------------------------------------------------------------------

@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf. ``x <= threshold`` goes left."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        depth = np.zeros(self.feature.size, dtype=np.int64)
        for i in range(self.feature.size):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_right = X[rows, np.maximum(f, 0)] > self.threshold[node]
            node = np.where(inner, np.where(go_right, self.right[node], self.left[node]), node)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], np.float64),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["value"], np.float64))


def _gini_score(a, b):
    # a = weight of class 1, b = total weight; sum of squared class weights / total
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(b > 0, (a * a + (b - a) ** 2) / np.where(b > 0, b, 1.0), 0.0)


def grow_tree(X, a, b, max_depth: int, criterion: str, reg_lambda: float = 1.0,
              min_child_weight: float = 0.0, max_features: int | None = None,
              rng: np.random.Generator | None = None, order: np.ndarray | None = None) -> Tree:
    """Exact greedy tree grown one level at a time.

    ``criterion="gini"``: ``a`` is the class-1 weight and ``b`` the total
    weight of each sample; leaves hold the weighted class-1 fraction.
    ``criterion="newton"``: ``a`` and ``b`` are gradients and hessians;
    leaves hold ``-G / (H + lambda)``.

    A split is taken only with strictly positive gain and both children
    carrying more than ``min_child_weight`` of ``b``. ``order`` may pass a
    precomputed per-feature argsort of ``X`` (shape (n_features, n)).
    """
    X = np.asarray(X, dtype=np.float64)
    n, n_feat = X.shape
    if criterion == "gini":
        score = _gini_score
    elif criterion == "newton":
        def score(g, h):
            return g * g / (h + reg_lambda)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")

    def leaf_value(sa, sb):
        if criterion == "gini":
            # child sums come from cumulative-sum differences; clip the round-off
            return min(max(sa / sb, 0.0), 1.0) if sb > 0 else 0.0
        return -sa / (sb + reg_lambda)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(sa, sb):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_value(sa, sb))
        return len(feature) - 1

    if order is None:
        order = np.argsort(X, axis=0, kind="stable").T
    order = np.ascontiguousarray(order)
    xs_all = X.T  # (F, n)
    # frontier: tree node id per segment, in segment order
    frontier = [new_node(float(a.sum()), float(b.sum()))]
    seg_of_sample = np.zeros(n, dtype=np.int16)
    for depth in range(max_depth):
        k = len(frontier)
        counts = np.bincount(seg_of_sample[order[0]], minlength=k)
        starts = np.r_[0, np.cumsum(counts)[:-1]]
        m = order.shape[1]
        seg = np.repeat(np.arange(k), counts)
        a_s = a[order]
        b_s = b[order]
        ca = np.cumsum(a_s, axis=1)
        cb = np.cumsum(b_s, axis=1)
        base_a = np.where(starts > 0, ca[:, np.maximum(starts - 1, 0)], 0.0)
        base_b = np.where(starts > 0, cb[:, np.maximum(starts - 1, 0)], 0.0)
        al = ca - base_a[:, seg]
        bl = cb - base_b[:, seg]
        tot_a = np.add.reduceat(a_s[0], starts) if m else np.zeros(0)
        tot_b = np.add.reduceat(b_s[0], starts) if m else np.zeros(0)
        ar = tot_a[seg] - al
        br = tot_b[seg] - bl
        xv = np.take_along_axis(xs_all, order, axis=1)
        valid = np.zeros((n_feat, m), dtype=bool)
        valid[:, :-1] = (seg[:-1] == seg[1:]) & (xv[:, :-1] < xv[:, 1:])
        valid &= (bl > min_child_weight) & (br > min_child_weight)
        gain = np.where(valid, score(al, bl) + score(ar, br) - score(tot_a, tot_b)[seg], -np.inf)
        if max_features is not None and max_features < n_feat:
            keys = rng.random((k, n_feat))
            allowed = np.zeros((k, n_feat), dtype=bool)
            np.put_along_axis(allowed, np.argsort(keys, axis=1)[:, :max_features], True, axis=1)
            gain = np.where(allowed.T[:, seg], gain, -np.inf)
        best_per_feat = np.maximum.reduceat(gain, starts, axis=1)  # (F, k)
        best_feat = np.argmax(best_per_feat, axis=0)
        best_gain = best_per_feat[best_feat, np.arange(k)]
        # tolerance guards against splitting on round-off
        split = best_gain > 1e-12 * np.maximum(np.abs(score(tot_a, tot_b)), 1.0)
        if not split.any():
            break
        split_nodes = np.flatnonzero(split)
        child_seg = np.full(k, -1, dtype=np.int64)
        go_right = np.zeros(n, dtype=bool)
        for rank, j in enumerate(split_nodes):
            f = best_feat[j]
            lo, hi = starts[j], starts[j] + counts[j]
            row = gain[f, lo:hi]
            p = lo + int(np.argmax(row == best_gain[j]))
            thr = (xv[f, p] + xv[f, p + 1]) / 2.0
            if not thr < xv[f, p + 1]:
                thr = xv[f, p]
            node = frontier[j]
            feature[node] = int(f)
            threshold[node] = float(thr)
            left[node] = new_node(float(al[f, p]), float(bl[f, p]))
            right[node] = new_node(float(ar[f, p]), float(br[f, p]))
            child_seg[j] = 2 * rank
            members = order[0, lo:hi]
            go_right[members] = X[members, f] > thr
        if depth + 1 == max_depth:
            break
        new_frontier = []
        for j in split_nodes:
            new_frontier += [left[frontier[j]], right[frontier[j]]]
        frontier = new_frontier
        # drop samples whose node became a leaf, then regroup by child segment
        sample_child = child_seg[seg_of_sample]
        keep = sample_child >= 0
        new_seg = (sample_child + go_right).astype(np.int16)
        order = order[keep[order]].reshape(n_feat, -1)
        seg_of_sample = np.where(keep, new_seg, -1).astype(np.int16)
        perm = np.argsort(seg_of_sample[order], axis=1, kind="stable")
        order = np.take_along_axis(order, perm, axis=1)
    return Tree(np.array(feature, np.int64), np.array(threshold, np.float64),
                np.array(left, np.int64), np.array(right, np.int64),
                np.array(value, np.float64))


@dataclass
class TreeEnsemble:
    """``forest``: probability = mean of tree leaf fractions.
    ``boosted``: probability = sigmoid(base_score + sum of tree outputs)."""
    kind: str
    trees: list
    base_score: float = 0.0
    learning_rate: float = 1.0
    params: dict = field(default_factory=dict)

    def staged_margins(self, X, stages: Sequence[int]):
        """Yield (n_trees, raw output) for each requested ensemble prefix size."""
        X = np.asarray(X, dtype=np.float64)
        acc = np.zeros(X.shape[0])
        done = 0
        for target in sorted(stages):
            for t in self.trees[done:target]:
                acc += t.predict(X)
            done = max(done, target)
            yield target, acc.copy()

    def _finish(self, raw, n_trees):
        if self.kind == "forest":
            return raw / max(n_trees, 1)
        return _sigmoid(self.base_score + raw)

    def predict_proba(self, X, n_trees: int | None = None) -> np.ndarray:
        n_trees = len(self.trees) if n_trees is None else n_trees
        (_, raw), = self.staged_margins(X, [n_trees])
        return self._finish(raw, n_trees)

    def staged_proba(self, X, stages: Sequence[int]):
        for n, raw in self.staged_margins(X, stages):
            yield n, self._finish(raw, n)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "base_score": self.base_score,
                "learning_rate": self.learning_rate, "params": self.params,
                "trees": [t.to_dict() for t in self.trees]}


def fit_tree(X, y, class_weights=None, max_depth: int = 3) -> Tree:
    X, y = _xy(X, y)
    _require_both_classes(y)
    s = sample_weights(y, class_weights)
    return grow_tree(X, s * y, s, max_depth, "gini")


def fit_forest(X, y, class_weights=None, n_estimators: int = 100, max_depth: int = 6,
               seed: int = 0, bootstrap: bool = True,
               max_features: int | str | None = "sqrt") -> TreeEnsemble:
    """Bootstrap forest of weighted-Gini trees.

    Tree ``t`` draws from its own generator seeded by ``(seed, t)``, so a
    larger forest with the same seed starts with the same trees.
    """
    X, y = _xy(X, y)
    _require_both_classes(y)
    s = sample_weights(y, class_weights)
    n, d = X.shape
    if max_features == "sqrt":
        max_features = max(1, int(np.sqrt(d)))
    order = np.argsort(X, axis=0, kind="stable").T
    trees = []
    for t in range(n_estimators):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t,)))
        mult = np.bincount(rng.integers(0, n, size=n), minlength=n) if bootstrap else np.ones(n)
        w = s * mult
        trees.append(grow_tree(X, w * y, w, max_depth, "gini", max_features=max_features,
                               rng=rng, order=order))
    return TreeEnsemble("forest", trees, params={"n_estimators": n_estimators,
                                                 "max_depth": max_depth, "seed": seed})


def fit_boosted(X, y, class_weights=None, n_estimators: int = 100, max_depth: int = 4,
                learning_rate: float = 0.1, reg_lambda: float = 1.0,
                min_child_weight: float = 1.0, history: list | None = None) -> TreeEnsemble:
    """Logistic-loss boosting with Newton leaf values.

    The base score is the class-weighted prior log-odds. If ``history`` is a
    list, the weighted training loss before each iteration and after the last
    is appended to it.
    """
    X, y = _xy(X, y)
    _require_both_classes(y)
    s = sample_weights(y, class_weights)
    yf = y.astype(np.float64)
    base = float(np.log(np.dot(s, yf) / np.dot(s, 1 - yf)))
    margin = np.full(X.shape[0], base)
    order = np.argsort(X, axis=0, kind="stable").T
    trees = []
    for _ in range(n_estimators):
        p = _sigmoid(margin)
        if history is not None:
            history.append(float(np.dot(s, np.logaddexp(0.0, margin) - yf * margin)))
        g = s * (p - yf)
        h = s * p * (1 - p)
        tree = grow_tree(X, g, h, max_depth, "newton", reg_lambda=reg_lambda,
                         min_child_weight=min_child_weight, order=order)
        tree.value *= learning_rate
        margin += tree.predict(X)
        trees.append(tree)
    if history is not None:
        history.append(float(np.dot(s, np.logaddexp(0.0, margin) - yf * margin)))
    return TreeEnsemble("boosted", trees, base, learning_rate,
                        params={"n_estimators": n_estimators, "max_depth": max_depth,
                                "learning_rate": learning_rate, "reg_lambda": reg_lambda})


def model_from_dict(d: Mapping):
    kind = d["kind"]
    if kind == "threshold":
        return ThresholdRule(d["threshold"], d["direction"], d["f1"], d["degenerate"],
                             d["feature"], d["scale"])
    if kind == "lr":
        return LinearModel(np.asarray(d["weights"], np.float64), d["bias"], d["C"])
    if kind in ("forest", "boosted"):
        return TreeEnsemble(kind, [Tree.from_dict(t) for t in d["trees"]], d["base_score"],
                            d["learning_rate"], dict(d["params"]))
    raise ValidationError(f"unknown model kind {kind!r}")


# -- model selection -------------------------------------------------------------------

MODEL_KINDS = ("threshold", "lr", "rf", "gbt")


def default_grid(kind: str, n_features: int = 21) -> dict:
    if kind == "threshold":
        return {"feature": list(range(n_features))}
    if kind == "lr":
        return dict(LR_GRID)
    if kind in ("rf", "gbt"):
        return dict(TREE_GRID)
    raise ValidationError(f"unknown model kind {kind!r}")


def grid_points(grid: Mapping[str, Sequence]) -> list[dict]:
    keys = sorted(grid)
    if any(len(grid[k]) == 0 for k in keys):
        raise ValidationError("grid has an empty axis")
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def fit_model(kind: str, params: Mapping, X, y, class_weights=None, seed: int = 0):
    if kind == "threshold":
        return fit_threshold_model(X, y, int(params["feature"]))
    if kind == "lr":
        return fit_logistic(X, y, class_weights, float(params["C"]))
    if kind == "rf":
        return fit_forest(X, y, class_weights, int(params["n_estimators"]),
                          int(params["max_depth"]), seed=seed)
    if kind == "gbt":
        return fit_boosted(X, y, class_weights, int(params["n_estimators"]),
                           int(params["max_depth"]),
                           learning_rate=float(params.get("learning_rate", 0.1)))
    raise ValidationError(f"unknown model kind {kind!r}")


def _scores_for_points(kind, points, X_tr, y_tr, X_va, cw, seed):
    """Validation scores for every grid point, sharing ensemble prefixes."""
    out = {}
    if kind in ("rf", "gbt"):
        groups: dict[tuple, list] = {}
        for i, p in enumerate(points):
            rest = tuple(sorted((k, v) for k, v in p.items() if k != "n_estimators"))
            groups.setdefault(rest, []).append(i)
        for rest, idx in groups.items():
            biggest = dict(rest, n_estimators=max(points[i]["n_estimators"] for i in idx))
            model = fit_model(kind, biggest, X_tr, y_tr, cw, seed)
            stages = sorted({points[i]["n_estimators"] for i in idx})
            staged = dict(model.staged_proba(X_va, stages))
            for i in idx:
                out[i] = staged[points[i]["n_estimators"]]
        return out
    for i, p in enumerate(points):
        out[i] = fit_model(kind, p, X_tr, y_tr, cw, seed).predict_proba(X_va)
    return out


def patient_folds(patients: Sequence[str], strata: Mapping[str, str], k: int = 5,
                  seed: int = 0) -> list[list[str]]:
    """Deal patients into ``k`` folds, stratum by stratum, after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    folds: list[list[str]] = [[] for _ in range(k)]
    offset = 0
    by_stratum: dict[str, list[str]] = {}
    for p in sorted(set(patients)):
        by_stratum.setdefault(str(strata.get(p, "")), []).append(p)
    for key in sorted(by_stratum):
        members = by_stratum[key]
        for j, i in enumerate(rng.permutation(len(members))):
            folds[(offset + j) % k].append(members[i])
        offset += len(members)
    return [sorted(f) for f in folds]


@dataclass
class CvResult:
    kind: str
    params: dict
    fold_metrics: list
    mean: dict
    std: dict
    grid_scores: list
    threshold: float
    folds: list

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "fold_metrics": self.fold_metrics,
                "mean": self.mean, "std": self.std, "grid_scores": self.grid_scores,
                "threshold": self.threshold, "folds": self.folds}


def cross_validate(kind: str, grid: Mapping[str, Sequence], X, y, patient_ids: Sequence[str],
                   strata: Mapping[str, str], k: int = 5, seed: int = 0) -> CvResult:
    """Patient-disjoint, stratified k-fold search maximising mean validation AUC.

    Class weights are re-estimated on each training fold. The decision
    threshold is the F1-max point of the pooled out-of-fold scores at the
    winning grid point.
    """
    X, y = _xy(X, y)
    pid = np.asarray([str(p) for p in patient_ids])
    if pid.shape != y.shape:
        raise ValidationError("one patient id per window is required")
    folds = patient_folds(pid.tolist(), strata, k, seed)
    points = grid_points(grid)
    fold_of = {p: i for i, f in enumerate(folds) for p in f}
    win_fold = np.array([fold_of[p] for p in pid])
    oof = {i: np.full(y.size, np.nan) for i in range(len(points))}
    for f in range(k):
        va = win_fold == f
        tr = ~va
        if not va.any():
            continue
        cw = class_weights_from_counts(y[tr])
        scores = _scores_for_points(kind, points, X[tr], y[tr], X[va], cw, seed)
        for i, sc in scores.items():
            oof[i][va] = sc
        logger.debug("cv %s fold %d done", kind, f)
    grid_scores = []
    for i in range(len(points)):
        aucs = [auc(oof[i][win_fold == f], y[win_fold == f]) for f in range(k)
                if np.any(win_fold == f)]
        grid_scores.append(float(np.nanmean(aucs)) if not np.all(np.isnan(aucs)) else float("nan"))
    ranked = np.where(np.isnan(grid_scores), -np.inf, grid_scores)
    best = int(np.argmax(ranked))
    fold_metrics = []
    for f in range(k):
        va = win_fold == f
        if not va.any():
            continue
        s_va, y_va = oof[best][va], y[va]
        m = metrics_at(s_va, y_va, pick_threshold(s_va, y_va), with_auc=True)
        fold_metrics.append({"fold": f, "f1": m.f1, "auc": m.auc, "se": m.se, "sp": m.sp,
                             "ppv": m.ppv, "threshold": m.threshold})
    names = ("f1", "auc", "se", "sp", "ppv")
    mean = {n: float(np.nanmean([fm[n] for fm in fold_metrics])) for n in names}
    std = {n: float(np.nanstd([fm[n] for fm in fold_metrics])) for n in names}
    return CvResult(kind, points[best], fold_metrics, mean, std,
                    [{"params": p, "mean_auc": s} for p, s in zip(points, grid_scores)],
                    pick_threshold(oof[best], y), folds)

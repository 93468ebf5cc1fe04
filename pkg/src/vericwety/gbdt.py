"""Histogram-based gradient-boosted trees with a binary logistic objective.

Second-order (Newton) boosting: per round, gradients g = p - y and hessians
h = p(1-p) drive histogram split search with gain
0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)) and leaf values
-G/(H+lam), shrunk by the learning rate. Positive-class gradients and
hessians are scaled by scale_pos_weight to counter class imbalance. Row
subsampling and per-tree column sampling come from a single seeded RNG, so
training is bit-reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_BINS = 256
_MIN_GAIN = 1e-12
_EPS = 1e-15


@dataclass
class Tree:
    """Flat array representation; feature == -1 marks a leaf."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            f = self.feature[node]
            active = np.where(f >= 0)[0]
            if active.size == 0:
                break
            cur = node[active]
            go_left = X[active, f[active]] < self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            value=np.asarray(d["value"], dtype=np.float64),
        )


@dataclass
class BoostedEnsemble:
    trees: list[Tree]
    feature_dim: int
    train_log_loss: list[float] = field(default_factory=list)

    def raw_margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        margin = np.zeros(X.shape[0], dtype=np.float64)
        for tree in self.trees:
            margin += tree.predict(X)
        return margin

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.raw_margin(X))

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "train_log_loss": self.train_log_loss,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedEnsemble":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            feature_dim=d["feature_dim"],
            train_log_loss=list(d.get("train_log_loss", [])),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _feature_boundaries(col: np.ndarray, max_bins: int) -> np.ndarray:
    u = np.unique(col)
    if u.size <= 1:
        return np.empty(0, dtype=np.float64)
    if u.size <= max_bins:
        return ((u[:-1] + u[1:]) / 2.0).astype(np.float64)
    qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
    return np.unique(np.quantile(col, qs)).astype(np.float64)


def bin_features(X: np.ndarray, max_bins: int = MAX_BINS):
    """Quantile-bin each column; bin(x) counts boundaries <= x, so the raw-value
    rule x < boundary[b] reproduces the binned rule bin <= b exactly."""
    n, n_features = X.shape
    binned = np.empty((n, n_features), dtype=np.uint8)
    boundaries = []
    for f in range(n_features):
        b = _feature_boundaries(X[:, f], max_bins)
        boundaries.append(b)
        binned[:, f] = np.searchsorted(b, X[:, f], side="right").astype(np.uint8)
    return binned, boundaries


def _hist(binned_sub: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray):
    """(F_sub, MAX_BINS) gradient/hessian histograms for one node."""
    m = rows.size
    n_feat = binned_sub.shape[1]
    flat = binned_sub[rows].astype(np.int64)
    flat += np.arange(n_feat, dtype=np.int64) * MAX_BINS
    flat = flat.ravel()
    gh = np.bincount(flat, weights=np.repeat(g[rows], n_feat), minlength=n_feat * MAX_BINS)
    hh = np.bincount(flat, weights=np.repeat(h[rows], n_feat), minlength=n_feat * MAX_BINS)
    return gh.reshape(n_feat, MAX_BINS), hh.reshape(n_feat, MAX_BINS)


def _best_split(gh, hh, g_tot, h_tot, lam, min_child_weight):
    gl = np.cumsum(gh, axis=1)
    hl = np.cumsum(hh, axis=1)
    gr = g_tot - gl
    hr = h_tot - hl
    valid = (hl >= min_child_weight) & (hr >= min_child_weight)
    valid[:, -1] = False
    parent = g_tot * g_tot / (h_tot + lam)
    gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
    gain = np.where(valid, gain, -np.inf)
    idx = int(np.argmax(gain))
    f_local, b = divmod(idx, gain.shape[1])
    if gain[f_local, b] <= _MIN_GAIN:
        return None
    return f_local, b


def _grow_tree(binned, boundaries, rows, g, h, *, max_depth, lam,
               min_child_weight, learning_rate, feat_ids):
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [0.0]

    binned_sub = binned[:, feat_ids] if feat_ids is not None else binned
    local_ids = feat_ids if feat_ids is not None else np.arange(binned.shape[1])

    def make_leaf(nid, rows_n):
        gs = float(g[rows_n].sum())
        hs = float(h[rows_n].sum())
        value[nid] = -gs / (hs + lam) * learning_rate

    root_hist = _hist(binned_sub, g, h, rows)
    stack = [(0, rows, 0, root_hist)]
    while stack:
        nid, rows_n, depth, hist_n = stack.pop()
        if depth >= max_depth or rows_n.size < 2:
            make_leaf(nid, rows_n)
            continue
        g_tot = float(g[rows_n].sum())
        h_tot = float(h[rows_n].sum())
        split = _best_split(hist_n[0], hist_n[1], g_tot, h_tot, lam, min_child_weight)
        if split is None:
            make_leaf(nid, rows_n)
            continue
        f_local, b = split
        f_global = int(local_ids[f_local])
        go_left = binned[rows_n, f_global] <= b
        rows_l = rows_n[go_left]
        rows_r = rows_n[~go_left]
        if rows_l.size == 0 or rows_r.size == 0:
            make_leaf(nid, rows_n)
            continue
        lid = len(feature)
        feature.extend([-1, -1])
        threshold.extend([0.0, 0.0])
        left.extend([-1, -1])
        right.extend([-1, -1])
        value.extend([0.0, 0.0])
        feature[nid] = f_global
        threshold[nid] = float(boundaries[f_global][b])
        left[nid] = lid
        right[nid] = lid + 1
        # histogram subtraction: only the smaller child is recounted
        if rows_l.size <= rows_r.size:
            hist_l = _hist(binned_sub, g, h, rows_l)
            hist_r = (hist_n[0] - hist_l[0], hist_n[1] - hist_l[1])
        else:
            hist_r = _hist(binned_sub, g, h, rows_r)
            hist_l = (hist_n[0] - hist_r[0], hist_n[1] - hist_r[1])
        stack.append((lid, rows_l, depth + 1, hist_l))
        stack.append((lid + 1, rows_r, depth + 1, hist_r))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


def train_boosted(
    X: np.ndarray,
    y: np.ndarray,
    *,
    n_estimators: int,
    max_depth: int,
    learning_rate: float,
    subsample: float,
    colsample: float,
    min_child_weight: float,
    l2_lambda: float,
    scale_pos_weight: float,
    random_state: int,
) -> BoostedEnsemble:
    """Fit one binary-logistic boosted ensemble; y must be 0/1."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, n_features = X.shape
    rng = np.random.default_rng(random_state)
    binned, boundaries = bin_features(X)
    w = np.where(y == 1.0, float(scale_pos_weight), 1.0)
    margin = np.zeros(n, dtype=np.float64)
    trees: list[Tree] = []
    losses: list[float] = []
    all_rows = np.arange(n, dtype=np.int64)
    for _ in range(n_estimators):
        p = _sigmoid(margin)
        g = (p - y) * w
        h = p * (1.0 - p) * w
        if subsample < 1.0:
            rows = all_rows[rng.random(n) < subsample]
            if rows.size < 2:
                rows = all_rows
        else:
            rows = all_rows
        if colsample < 1.0:
            k = max(1, math.ceil(colsample * n_features))
            feat_ids = np.sort(rng.choice(n_features, size=k, replace=False))
        else:
            feat_ids = None
        tree = _grow_tree(
            binned, boundaries, rows, g, h,
            max_depth=max_depth, lam=l2_lambda,
            min_child_weight=min_child_weight,
            learning_rate=learning_rate, feat_ids=feat_ids,
        )
        trees.append(tree)
        margin += tree.predict(X)
        p = np.clip(_sigmoid(margin), _EPS, 1.0 - _EPS)
        losses.append(float(-np.average(y * np.log(p) + (1.0 - y) * np.log(1.0 - p), weights=w)))
    return BoostedEnsemble(trees=trees, feature_dim=n_features, train_log_loss=losses)

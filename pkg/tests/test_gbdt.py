from __future__ import annotations

import numpy as np
import pytest

from vericwety.gbdt import (
    BoostedEnsemble,
    Tree,
    _feature_boundaries,
    bin_features,
    train_boosted,
)

COMMON = dict(
    n_estimators=20, max_depth=4, learning_rate=0.1, subsample=0.8,
    colsample=0.8, min_child_weight=1.0, l2_lambda=1.0,
)


def test_binned_rule_matches_raw_value_rule():
    # bin(x) <= b must be exactly x < boundaries[b]
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 3))
    X[:, 1] = np.round(X[:, 1])  # few unique values
    binned, boundaries = bin_features(X)
    for f in range(3):
        b = boundaries[f]
        for t in range(len(b)):
            assert np.array_equal(binned[:, f] <= t, X[:, f] < b[t]), (f, t)


def test_boundaries_for_constant_and_binary_columns():
    assert _feature_boundaries(np.zeros(10), 256).size == 0
    b = _feature_boundaries(np.array([0.0, 1.0, 0.0, 1.0]), 256)
    assert b.tolist() == [0.5]


def test_boundaries_capped_at_max_bins():
    col = np.arange(10_000, dtype=np.float64)
    b = _feature_boundaries(col, 256)
    assert b.size <= 255


def test_hand_built_tree_predicts():
    tree = Tree(
        feature=np.array([0, -1, -1], dtype=np.int32),
        threshold=np.array([0.5, 0.0, 0.0]),
        left=np.array([1, -1, -1], dtype=np.int32),
        right=np.array([2, -1, -1], dtype=np.int32),
        value=np.array([0.0, -1.0, 2.0]),
    )
    X = np.array([[0.0], [0.5], [1.0]])
    assert tree.predict(X).tolist() == [-1.0, 2.0, 2.0]  # x < 0.5 goes left


def test_training_loss_decreases():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 5))
    y = (X[:, 0] > 0).astype(float)
    ens = train_boosted(X, y, scale_pos_weight=1.0, random_state=0, **COMMON)
    assert ens.train_log_loss[-1] < ens.train_log_loss[0]
    assert len(ens.train_log_loss) == COMMON["n_estimators"]


def test_scale_pos_weight_raises_positive_scores():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(400, 3))
    y = (rng.random(400) < 0.1).astype(float)  # noisy rare positives
    low = train_boosted(X, y, scale_pos_weight=1.0, random_state=0, **COMMON)
    high = train_boosted(X, y, scale_pos_weight=9.0, random_state=0, **COMMON)
    assert high.predict_proba(X).mean() > low.predict_proba(X).mean()


def test_row_and_column_sampling_follow_seed():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 8))
    y = (X[:, 0] + 0.3 * rng.normal(size=300) > 0).astype(float)
    a = train_boosted(X, y, scale_pos_weight=1.0, random_state=1, **COMMON)
    b = train_boosted(X, y, scale_pos_weight=1.0, random_state=2, **COMMON)
    assert a.to_dict() != b.to_dict()  # sampling differs across seeds
    c = train_boosted(X, y, scale_pos_weight=1.0, random_state=1, **COMMON)
    assert a.to_dict() == c.to_dict()


def test_ensemble_dict_round_trip():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 4))
    y = (X[:, 1] > 0).astype(float)
    ens = train_boosted(X, y, scale_pos_weight=1.0, random_state=0, **COMMON)
    clone = BoostedEnsemble.from_dict(ens.to_dict())
    assert np.array_equal(clone.predict_proba(X), ens.predict_proba(X))


def test_min_child_weight_limits_tiny_leaves():
    # a hessian floor high enough to forbid any split yields single-leaf trees
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 2))
    y = (X[:, 0] > 0).astype(float)
    params = dict(COMMON, min_child_weight=1000.0, subsample=1.0, colsample=1.0)
    ens = train_boosted(X, y, scale_pos_weight=1.0, random_state=0, **params)
    assert all(t.feature.tolist() == [-1] for t in ens.trees)

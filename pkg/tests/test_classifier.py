from __future__ import annotations

import json
from collections import Counter

import numpy as np
import pytest

from vericwety.classifier import (
    AUTO,
    GROUP_BY_DESIGN,
    LINE_BINARY,
    MODULE_MULTICLASS,
    STRATIFIED_BY_LABEL,
    Dataset,
    GbdtConfig,
    SplitSpec,
    auto_pos_weight,
    build_line_dataset,
    build_module_dataset,
    load_model,
    predict_design,
    predict_label,
    predict_proba,
    save_model,
    split_dataset,
    train,
)
from vericwety.corpus import DesignUnit, _segment_text
from vericwety.embeddings import FallbackEmbedder, embed_corpus
from vericwety.errors import (
    DegenerateLabels,
    DimensionMismatch,
    MissingEmbeddings,
    TooFewExamples,
)
from vericwety.labeling import LineLabelSet, ModuleLabelSet
from vericwety.store import EmbeddingStore

FAST = GbdtConfig(n_estimators=40, random_state=0)


def make_dataset(n, labels=None, dim=4, seed=0, groups=None):
    rng = np.random.default_rng(seed)
    labels = labels if labels is not None else [i % 2 for i in range(n)]
    return Dataset(
        features=rng.normal(size=(n, dim)).astype(np.float32),
        labels=list(labels),
        groups=groups or [f"g{i}" for i in range(n)],
        row_ids=list(range(n)),
    )


# --- config ---

def test_gbdt_config_defaults_match_contract():
    cfg = GbdtConfig()
    assert cfg.n_estimators == 300
    assert cfg.max_depth == 6
    assert cfg.learning_rate == 0.1
    assert cfg.subsample == 0.8
    assert cfg.colsample == 0.8
    assert cfg.min_child_weight == 3.0
    assert cfg.l2_lambda == 1.0
    assert cfg.tree_method == "histogram"
    assert cfg.eval_metric == "log_loss"
    assert cfg.scale_pos_weight == AUTO
    cfg.validate()


def test_gbdt_config_rejects_bad_values():
    with pytest.raises(ValueError):
        GbdtConfig(subsample=0.0).validate()
    with pytest.raises(ValueError):
        GbdtConfig(tree_method="exact").validate()
    with pytest.raises(ValueError):
        GbdtConfig(n_estimators=-1).validate()


# --- splitting ---

def test_split_ten_examples_eight_two():
    train_ds, test_ds = split_dataset(make_dataset(10), SplitSpec(0.8, seed=1))
    assert len(train_ds) == 8 and len(test_ds) == 2


def test_split_same_seed_identical():
    ds = make_dataset(40)
    a = split_dataset(ds, SplitSpec(0.8, seed=5))
    b = split_dataset(ds, SplitSpec(0.8, seed=5))
    assert a[0].row_ids == b[0].row_ids and a[1].row_ids == b[1].row_ids
    c = split_dataset(ds, SplitSpec(0.8, seed=6))
    assert c[0].row_ids != a[0].row_ids  # different seed reshuffles


def test_split_stratified_keeps_class_proportions():
    labels = ["a"] * 50 + ["b"] * 30 + ["c"] * 20
    ds = make_dataset(100, labels=labels)
    train_ds, test_ds = split_dataset(ds, SplitSpec(0.8, seed=3, strategy=STRATIFIED_BY_LABEL))
    counts = Counter(train_ds.labels)
    assert abs(counts["a"] - 40) <= 1
    assert abs(counts["b"] - 24) <= 1
    assert abs(counts["c"] - 16) <= 1
    assert abs(len(train_ds) - 80) <= 1


def test_split_group_by_design_no_leakage():
    groups = [f"design{i // 50}" for i in range(150)]  # 3 designs x 50 lines
    ds = make_dataset(150, labels=[0] * 150, groups=groups)
    train_ds, test_ds = split_dataset(ds, SplitSpec(0.8, seed=2, strategy=GROUP_BY_DESIGN))
    assert set(train_ds.groups).isdisjoint(set(test_ds.groups))
    assert len(train_ds) + len(test_ds) == 150


def test_split_singleton_class_goes_to_train(caplog):
    labels = ["common"] * 9 + ["rare"]
    ds = make_dataset(10, labels=labels)
    with caplog.at_level("WARNING"):
        train_ds, test_ds = split_dataset(ds, SplitSpec(0.8, seed=0))
    assert "rare" in train_ds.labels
    assert "rare" not in test_ds.labels
    assert any("single example" in r.message for r in caplog.records)


def test_split_too_few_examples():
    with pytest.raises(TooFewExamples):
        split_dataset(make_dataset(4), SplitSpec(0.8, seed=0))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        split_dataset(make_dataset(10), SplitSpec(1.5, seed=0))
    with pytest.raises(ValueError):
        split_dataset(make_dataset(10), SplitSpec(0.8, seed=0, strategy="RANDOM"))


# --- pos weight ---

def test_auto_pos_weight_ratios():
    assert auto_pos_weight([0] * 95 + [1] * 5) == pytest.approx(19.0)
    assert auto_pos_weight([0, 1] * 50) == pytest.approx(1.0)


def test_auto_pos_weight_at_reported_scale():
    labels = np.zeros(148500, dtype=int)
    labels[:6300] = 1
    assert auto_pos_weight(labels) == pytest.approx(142200 / 6300, abs=1e-9)
    assert auto_pos_weight(labels) == pytest.approx(22.5714285, abs=1e-6)


def test_auto_pos_weight_degenerate():
    with pytest.raises(DegenerateLabels):
        auto_pos_weight([1, 1, 1])
    with pytest.raises(DegenerateLabels):
        auto_pos_weight([0, 0])


# --- training oracles ---

def separable_binary(n=200, seed=42):
    # classes live on x0 >= 0.5 and x0 <= -0.5: margin 1.0, x1 is noise
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.5).astype(int)
    x0 = np.where(y == 1, rng.uniform(0.5, 2.0, n), rng.uniform(-2.0, -0.5, n))
    X = np.column_stack([x0, rng.normal(size=n)])
    return X.astype(np.float32), y


def test_train_separable_binary_fits_nearly_perfectly():
    X, y = separable_binary()
    ds = Dataset(X, list(y), [f"g{i}" for i in range(len(y))], list(range(len(y))))
    model = train(ds, GbdtConfig(random_state=0), LINE_BINARY)
    pred = predict_label(model, X)
    assert (pred == y).mean() >= 0.99


def test_train_constant_features_predicts_prior():
    rng = np.random.default_rng(1)
    y = (rng.random(500) < 0.3).astype(int)
    X = np.ones((500, 4), dtype=np.float32)
    ds = Dataset(X[:400], list(y[:400]), [f"g{i}" for i in range(400)], list(range(400)))
    model = train(ds, GbdtConfig(random_state=0, scale_pos_weight=1.0), LINE_BINARY)
    held_out = predict_proba(model, X[400:])
    prior = y[:400].mean()
    assert np.all(np.abs(held_out - prior) <= 0.02)


def gaussian_clusters(n_per=120, seed=7):
    rng = np.random.default_rng(seed)
    centers = {"CWE-1244": (8, 0), "CWE-1245": (-8, 8), "NONE": (0, -8)}
    X, labels = [], []
    for lab, (cx, cy) in centers.items():
        pts = rng.normal(size=(n_per, 2)) * 0.5 + np.array([cx, cy])
        X.append(pts)
        labels += [lab] * n_per
    return np.vstack(X).astype(np.float32), labels


def test_train_multiclass_separated_clusters():
    X, labels = gaussian_clusters()
    ds = Dataset(X, labels, [f"g{i}" for i in range(len(labels))], list(range(len(labels))))
    train_ds, test_ds = split_dataset(ds, SplitSpec(0.8, seed=0))
    model = train(train_ds, GbdtConfig(n_estimators=100, random_state=0), MODULE_MULTICLASS)
    pred = predict_label(model, test_ds.features)
    acc = np.mean([p == g for p, g in zip(pred, test_ds.labels)])
    assert acc >= 0.95


def test_train_rejects_single_class():
    ds = make_dataset(20, labels=[1] * 20)
    with pytest.raises(DegenerateLabels):
        train(ds, FAST, LINE_BINARY)
    ds2 = make_dataset(20, labels=["only"] * 20)
    with pytest.raises(DegenerateLabels):
        train(ds2, FAST, MODULE_MULTICLASS)


def test_train_rejects_non_finite_features():
    ds = make_dataset(10)
    ds.features[0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        train(ds, FAST, LINE_BINARY)


def test_train_records_log_loss_per_round():
    X, y = separable_binary(100)
    ds = Dataset(X, list(y), [f"g{i}" for i in range(100)], list(range(100)))
    model = train(ds, FAST, LINE_BINARY)
    losses = model.ensembles["1"].train_log_loss
    assert len(losses) == FAST.n_estimators
    assert losses[-1] < losses[0]  # boosting actually reduces training loss


def test_label_space_follows_taxonomy_order():
    X, labels = gaussian_clusters(n_per=30)
    ds = Dataset(X, labels, [f"g{i}" for i in range(len(labels))], list(range(len(labels))),
                 label_space=("CWE-1245", "CWE-1244", "NONE", "CWE-321"))
    model = train(ds, FAST, MODULE_MULTICLASS)
    assert model.label_space == ("CWE-1245", "CWE-1244", "NONE")  # absent labels dropped


# --- prediction contracts ---

def trained_binary(seed=0):
    X, y = separable_binary(150, seed=seed)
    ds = Dataset(X, list(y), [f"g{i}" for i in range(150)], list(range(150)))
    return train(ds, FAST, LINE_BINARY), X, y


def test_scores_in_unit_interval_and_deterministic():
    model, X, _ = trained_binary()
    scores = predict_proba(model, X)
    assert np.all((scores >= 0) & (scores <= 1))
    dup = np.vstack([X[0], X[0]])
    s = predict_proba(model, dup)
    assert s[0] == s[1]


def test_true_positives_score_above_true_negatives():
    model, X, y = trained_binary()
    scores = predict_proba(model, X)
    assert scores[y == 1].mean() > scores[y == 0].mean()


def test_threshold_boundary_counts_as_positive():
    model, X, _ = trained_binary()
    scores = predict_proba(model, X)
    pred = predict_label(model, X, threshold=float(scores[0]))
    assert pred[0] == 1  # score == threshold -> positive


def test_threshold_zero_flags_everything():
    model, X, _ = trained_binary()
    assert predict_label(model, X, threshold=0.0).all()


def test_threshold_monotonicity():
    model, X, _ = trained_binary()
    scores = predict_proba(model, X)
    previous = None
    for t in np.linspace(0, 1.01, 30):
        flagged = set(np.where(scores >= t)[0])
        if previous is not None:
            assert flagged.issubset(previous)
        previous = flagged


def test_multiclass_argmax_and_tie_break():
    X, labels = gaussian_clusters(n_per=40)
    ds = Dataset(X, labels, [f"g{i}" for i in range(len(labels))], list(range(len(labels))),
                 label_space=("CWE-1244", "CWE-1245", "NONE"))
    model = train(ds, FAST, MODULE_MULTICLASS)
    scores = predict_proba(model, X[:5])
    assert scores.shape == (5, 3)
    # argmax invariance under positive scaling
    picked = [model.label_space[i] for i in np.argmax(scores, axis=1)]
    scaled = [model.label_space[i] for i in np.argmax(scores * 3.7, axis=1)]
    assert picked == scaled


def test_dimension_mismatch_on_predict():
    model, X, _ = trained_binary()
    with pytest.raises(DimensionMismatch):
        predict_proba(model, X[:, :1])


# --- reproducibility and artifact io ---

def test_same_seed_same_model_and_predictions():
    X, y = separable_binary(150)
    ds = Dataset(X, list(y), [f"g{i}" for i in range(150)], list(range(150)))
    m1 = train(ds, GbdtConfig(n_estimators=30, random_state=9), LINE_BINARY)
    m2 = train(ds, GbdtConfig(n_estimators=30, random_state=9), LINE_BINARY)
    assert np.array_equal(predict_proba(m1, X), predict_proba(m2, X))
    d1 = {lab: e.to_dict() for lab, e in m1.ensembles.items()}
    d2 = {lab: e.to_dict() for lab, e in m2.ensembles.items()}
    assert json.dumps(d1, sort_keys=True) == json.dumps(d2, sort_keys=True)


def test_model_round_trip(tmp_path):
    model, X, _ = trained_binary()
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.task == model.task
    assert loaded.config == model.config
    assert loaded.metadata["dataset_hash"] == model.metadata["dataset_hash"]
    assert np.array_equal(predict_proba(loaded, X), predict_proba(model, X))


# --- two-stage design prediction ---

def planted_corpus_store(tmp_path, n_normal_lines=49):
    """One design with a single anomalous line among normal ones."""
    normal = [f"  assign w{i % 7} = r{i % 5} ^ r{(i + 1) % 5};" for i in range(n_normal_lines)]
    planted_at = 25
    lines = normal[:planted_at] + ["  localparam KEY = 128'hDEADBEEFDEADBEEF;"] + normal[planted_at:]
    text = "\n".join(["module planted (input clk);"] + lines + ["endmodule"])
    unit = DesignUnit("planted", "planted", text, tuple(_segment_text(text)), "mem")
    backend = FallbackEmbedder(dimension=64)
    store = EmbeddingStore.create(tmp_path / "store", backend.info)
    embed_corpus(backend, [unit], store)
    return unit, store, backend, planted_at + 2  # +1 header, +1 one-based


def train_two_stage_models(unit, store, backend, buggy_line):
    # module model: this design's vector labeled buggy, jittered copies labeled NONE
    rng = np.random.default_rng(0)
    module_vec = store.get(unit.design_id, "MODULE")
    clean_vecs = rng.normal(size=(20, module_vec.shape[0])).astype(np.float32)
    X = np.vstack([module_vec[None, :].repeat(20, axis=0), clean_vecs])
    labels = ["CWE-321"] * 20 + ["NONE"] * 20
    module_ds = Dataset(X, labels, [f"g{i}" for i in range(40)], list(range(40)),
                        label_space=("CWE-321", "NONE"))
    module_model = train(module_ds, FAST, MODULE_MULTICLASS)
    # line model on line||module features
    feats, ys = [], []
    for no in range(1, unit.line_count + 1):
        feats.append(np.concatenate([store.get(unit.design_id, "LINE", no), module_vec]))
        ys.append(1 if no == buggy_line else 0)
    line_ds = Dataset(np.asarray(feats), ys, [unit.design_id] * len(ys), list(range(len(ys))))
    line_model = train(line_ds, GbdtConfig(n_estimators=60, random_state=0), LINE_BINARY)
    return module_model, line_model


def test_predict_design_finds_planted_line(tmp_path):
    unit, store, backend, buggy_line = planted_corpus_store(tmp_path)
    module_model, line_model = train_two_stage_models(unit, store, backend, buggy_line)
    result = predict_design(module_model, line_model, unit, store, threshold=0.5)
    assert result["module_label"] == "CWE-321"
    assert buggy_line in result["buggy_line_nos"]
    store.close()


def test_predict_design_none_skips_line_stage(tmp_path):
    unit, store, backend, buggy_line = planted_corpus_store(tmp_path)
    module_model, line_model = train_two_stage_models(unit, store, backend, buggy_line)

    class ExplodingLineModel:
        feature_dim = line_model.feature_dim
        task = LINE_BINARY

        def __getattr__(self, name):
            raise AssertionError("line model must not be touched for NONE designs")

    # force the module stage to NONE by training on inverted labels
    rng = np.random.default_rng(0)
    module_vec = store.get(unit.design_id, "MODULE")
    X = np.vstack([module_vec[None, :].repeat(20, axis=0),
                   rng.normal(size=(20, module_vec.shape[0])).astype(np.float32)])
    flipped = Dataset(X, ["NONE"] * 20 + ["CWE-321"] * 20,
                      [f"g{i}" for i in range(40)], list(range(40)),
                      label_space=("CWE-321", "NONE"))
    none_model = train(flipped, FAST, MODULE_MULTICLASS)
    result = predict_design(none_model, ExplodingLineModel(), unit, store)
    assert result["module_label"] == "NONE"
    assert result["buggy_line_nos"] == []
    store.close()


def test_predict_design_missing_embeddings(tmp_path):
    unit, store, backend, buggy_line = planted_corpus_store(tmp_path)
    module_model, line_model = train_two_stage_models(unit, store, backend, buggy_line)
    other = DesignUnit("ghost", "g", "module g;\nendmodule",
                       tuple(_segment_text("module g;\nendmodule")), "mem")
    with pytest.raises(MissingEmbeddings):
        predict_design(module_model, line_model, other, store)
    store.close()


# --- dataset builders ---

def test_build_datasets_from_store(tmp_path):
    backend = FallbackEmbedder(dimension=32)
    texts = {
        "d0": "module a;\nwire x;\nendmodule",
        "d1": "module b;\nwire y;\nendmodule",
    }
    units = [DesignUnit(d, d, t, tuple(_segment_text(t)), "mem") for d, t in texts.items()]
    store = EmbeddingStore.create(tmp_path / "store", backend.info)
    embed_corpus(backend, units, store)
    module_set = ModuleLabelSet({"d0": "CWE-1244", "d1": "NONE"})
    line_set = LineLabelSet({(d, n): 0 for d in texts for n in (1, 2, 3)})
    module_ds = build_module_dataset(store, module_set, ("CWE-1244", "NONE"))
    assert len(module_ds) == 2 and module_ds.features.shape == (2, 32)
    combined = build_line_dataset(store, line_set, combine=True)
    assert combined.features.shape == (6, 64)  # line || module = 2d
    line_only = build_line_dataset(store, line_set, combine=False)
    assert line_only.features.shape == (6, 32)
    # feature halves match the stored vectors
    v = store.get("d0", "LINE", 1)
    m = store.get("d0", "MODULE")
    assert np.array_equal(combined.features[0, :32], v)
    assert np.array_equal(combined.features[0, 32:], m)
    store.close()

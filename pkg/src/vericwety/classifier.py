"""Gradient-boosted classifiers for module-level CWE identification and
line-level bug detection.

The module task is one-vs-rest: one binary-logistic ensemble per label,
decided by argmax of the per-label scores (ties break toward the earlier
label_space entry). The line task is a single binary ensemble over
line||module features with scale_pos_weight countering the heavy imbalance.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass, field, asdict

import numpy as np

from . import gbdt
from .corpus import DesignUnit
from .errors import (
    DegenerateLabels,
    DimensionMismatch,
    MissingEmbeddings,
    TooFewExamples,
)
from .labeling import NONE_LABEL, LineLabelSet, ModuleLabelSet

log = logging.getLogger(__name__)

MODULE_MULTICLASS = "MODULE_MULTICLASS"
LINE_BINARY = "LINE_BINARY"

STRATIFIED_BY_LABEL = "STRATIFIED_BY_LABEL"
GROUP_BY_DESIGN = "GROUP_BY_DESIGN"

AUTO = "AUTO"


@dataclass
class GbdtConfig:
    n_estimators: int = 300
    max_depth: int = 6
    learning_rate: float = 0.1
    subsample: float = 0.8
    colsample: float = 0.8
    min_child_weight: float = 3.0
    l2_lambda: float = 1.0
    tree_method: str = "histogram"
    eval_metric: str = "log_loss"
    random_state: int = 0
    scale_pos_weight: float | str = AUTO

    def validate(self) -> None:
        if self.n_estimators <= 0 or self.max_depth <= 0:
            raise ValueError("n_estimators and max_depth must be positive")
        if not 0 < self.learning_rate:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.subsample <= 1 or not 0 < self.colsample <= 1:
            raise ValueError("subsample and colsample must be in (0, 1]")
        if self.min_child_weight < 0 or self.l2_lambda < 0:
            raise ValueError("min_child_weight and l2_lambda must be >= 0")
        if self.tree_method != "histogram":
            raise ValueError(f"unsupported tree_method {self.tree_method!r}")
        if self.eval_metric != "log_loss":
            raise ValueError(f"unsupported eval_metric {self.eval_metric!r}")
        if self.scale_pos_weight != AUTO and float(self.scale_pos_weight) <= 0:
            raise ValueError("scale_pos_weight must be positive or AUTO")


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    strategy: str = STRATIFIED_BY_LABEL

    def validate(self) -> None:
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.strategy not in (STRATIFIED_BY_LABEL, GROUP_BY_DESIGN):
            raise ValueError(f"unknown split strategy {self.strategy!r}")


@dataclass
class Dataset:
    """Feature matrix plus aligned labels and per-row design ids."""
    features: np.ndarray
    labels: list  # str labels (module task) or 0/1 ints (line task)
    groups: list[str]  # design_id per row
    row_ids: list  # design_id (module task) or (design_id, line_no) (line task)
    label_space: tuple[str, ...] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if len(self.labels) != self.features.shape[0]:
            raise ValueError("labels/features length mismatch")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(
            features=self.features[idx],
            labels=[self.labels[i] for i in idx],
            groups=[self.groups[i] for i in idx],
            row_ids=[self.row_ids[i] for i in idx],
            label_space=self.label_space,
        )


@dataclass
class TrainedModel:
    task: str
    label_space: tuple[str, ...]  # ("0", "1") placeholder for LINE_BINARY
    ensembles: dict[str, gbdt.BoostedEnsemble]
    config: GbdtConfig
    feature_dim: int
    metadata: dict = field(default_factory=dict)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Deterministic 80/20 (or configured) split.

    STRATIFIED_BY_LABEL apportions per-class train counts by largest
    remainder, so every class stays within one example of its exact share and
    the overall train size within one of round(fraction * N). Classes with a
    single member go wholly to train (with a warning). GROUP_BY_DESIGN
    shuffles design ids and puts round(fraction * G) whole designs in train;
    no design ever straddles the boundary.
    """
    spec.validate()
    n = len(dataset)
    if n < 5:
        raise TooFewExamples(f"need at least 5 examples, got {n}")
    rng = random.Random(spec.seed)
    if spec.strategy == GROUP_BY_DESIGN:
        groups = sorted(set(dataset.groups))
        rng.shuffle(groups)
        n_train_groups = _round_half_up(spec.train_fraction * len(groups))
        train_groups = set(groups[:n_train_groups])
        train_idx = [i for i, gr in enumerate(dataset.groups) if gr in train_groups]
        test_idx = [i for i, gr in enumerate(dataset.groups) if gr not in train_groups]
        return dataset.subset(train_idx), dataset.subset(test_idx)

    by_class: dict = {}
    for i, lab in enumerate(dataset.labels):
        by_class.setdefault(lab, []).append(i)
    singletons = {lab for lab, idxs in by_class.items() if len(idxs) < 2}
    for lab in sorted(singletons, key=str):
        log.warning("class %r has a single example; kept in train", lab)

    target = _round_half_up(spec.train_fraction * n)
    forced = sum(len(by_class[lab]) for lab in singletons)
    remaining = max(0, target - forced)

    plan: list[tuple] = []  # (label, take_count)
    quotas = []
    for lab in sorted(k for k in by_class if k not in singletons):
        q = spec.train_fraction * len(by_class[lab])
        quotas.append((lab, q))
    base = {lab: math.floor(q) for lab, q in quotas}
    leftover = remaining - sum(base.values())
    by_remainder = sorted(quotas, key=lambda t: (-(t[1] - math.floor(t[1])), str(t[0])))
    for lab, _ in by_remainder:
        if leftover <= 0:
            break
        if base[lab] < len(by_class[lab]):
            base[lab] += 1
            leftover -= 1
    for lab in sorted(k for k in by_class if k not in singletons):
        plan.append((lab, base[lab]))
    for lab in sorted(singletons, key=str):
        plan.append((lab, len(by_class[lab])))

    train_idx: list[int] = []
    test_idx: list[int] = []
    for lab, take in plan:
        idxs = list(by_class[lab])
        rng.shuffle(idxs)
        train_idx.extend(idxs[:take])
        test_idx.extend(idxs[take:])
    train_idx.sort()
    test_idx.sort()
    return dataset.subset(train_idx), dataset.subset(test_idx)


def auto_pos_weight(labels) -> float:
    """negatives / positives for a binary label vector."""
    arr = np.asarray(labels)
    pos = int(np.sum(arr == 1))
    neg = int(np.sum(arr == 0))
    if pos == 0 or neg == 0:
        raise DegenerateLabels(f"need both classes, got {pos} positive / {neg} negative")
    return neg / pos


def _resolve_pos_weight(config: GbdtConfig, y: np.ndarray) -> float:
    if config.scale_pos_weight == AUTO:
        return auto_pos_weight(y)
    return float(config.scale_pos_weight)


def _dataset_hash(dataset: Dataset) -> str:
    hasher = hashlib.sha256()
    hasher.update(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
    hasher.update(json.dumps([str(x) for x in dataset.labels]).encode())
    return hasher.hexdigest()


def train(dataset: Dataset, config: GbdtConfig, task: str,
          split_seed: int | None = None) -> TrainedModel:
    """Fit a TrainedModel; deterministic given (dataset, config, seed)."""
    config.validate()
    X = np.asarray(dataset.features, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain NaN or Inf")
    metadata = {
        "dataset_hash": _dataset_hash(dataset),
        "split_seed": split_seed,
        "n_examples": len(dataset),
    }
    common = dict(
        n_estimators=config.n_estimators,
        max_depth=config.max_depth,
        learning_rate=config.learning_rate,
        subsample=config.subsample,
        colsample=config.colsample,
        min_child_weight=config.min_child_weight,
        l2_lambda=config.l2_lambda,
    )
    if task == LINE_BINARY:
        y = np.asarray(dataset.labels, dtype=np.float64)
        if set(np.unique(y)) - {0.0, 1.0}:
            raise ValueError("line task labels must be 0/1")
        if len(np.unique(y)) < 2:
            raise DegenerateLabels("line dataset holds a single class")
        spw = _resolve_pos_weight(config, y)
        ens = gbdt.train_boosted(
            X, y, scale_pos_weight=spw, random_state=config.random_state, **common
        )
        return TrainedModel(
            task=task, label_space=("0", "1"), ensembles={"1": ens},
            config=config, feature_dim=X.shape[1], metadata=metadata,
        )
    if task != MODULE_MULTICLASS:
        raise ValueError(f"unknown task {task!r}")
    labels = [str(x) for x in dataset.labels]
    present = set(labels)
    if len(present) < 2:
        raise DegenerateLabels("module dataset holds a single class")
    if dataset.label_space:
        space = tuple(lab for lab in dataset.label_space if lab in present)
        stray = present - set(dataset.label_space)
        if stray:
            raise ValueError(f"labels outside label_space: {sorted(stray)}")
    else:
        space = tuple(sorted(present))
    ensembles = {}
    for k, lab in enumerate(space):
        y = np.asarray([1.0 if x == lab else 0.0 for x in labels])
        spw = _resolve_pos_weight(config, y)
        ensembles[lab] = gbdt.train_boosted(
            X, y, scale_pos_weight=spw, random_state=config.random_state + k, **common
        )
    return TrainedModel(
        task=task, label_space=space, ensembles=ensembles,
        config=config, feature_dim=X.shape[1], metadata=metadata,
    )


def _check_features(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != model.feature_dim:
        raise DimensionMismatch(
            f"model expects {model.feature_dim} features, got {X.shape[1]}"
        )
    return X


def predict_proba(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """LINE_BINARY: (n,) positive-class probabilities.
    MODULE_MULTICLASS: (n, K) per-label sigmoid scores in label_space order."""
    X = _check_features(model, features)
    if model.task == LINE_BINARY:
        return model.ensembles["1"].predict_proba(X)
    cols = [model.ensembles[lab].predict_proba(X) for lab in model.label_space]
    return np.stack(cols, axis=1)


def predict_label(model: TrainedModel, features: np.ndarray, threshold: float = 0.5):
    """Binary: 1 iff score >= threshold. Multi-class: argmax, first label wins ties."""
    scores = predict_proba(model, features)
    if model.task == LINE_BINARY:
        return (scores >= threshold).astype(int)
    idx = np.argmax(scores, axis=1)
    return [model.label_space[i] for i in idx]


def predict_design(
    module_model: TrainedModel,
    line_model: TrainedModel,
    unit: DesignUnit,
    store,
    threshold: float = 0.5,
) -> dict:
    """Two-stage inference: module label first, lines only when it is not NONE."""
    if not store.contains(unit.design_id, "MODULE"):
        raise MissingEmbeddings(f"no module embedding for {unit.design_id}")
    module_vec = store.get(unit.design_id, "MODULE")
    label = predict_label(module_model, module_vec.reshape(1, -1))[0]
    if label == NONE_LABEL:
        return {"design_id": unit.design_id, "module_label": label, "buggy_line_nos": []}
    feats = []
    for no in range(1, unit.line_count + 1):
        if not store.contains(unit.design_id, "LINE", no):
            raise MissingEmbeddings(f"no embedding for {unit.design_id} line {no}")
        line_vec = store.get(unit.design_id, "LINE", no)
        if line_model.feature_dim == line_vec.shape[0]:
            feats.append(line_vec)
        else:
            feats.append(np.concatenate([line_vec, module_vec]))
    scores = predict_proba(line_model, np.asarray(feats))
    buggy = [no for no, s in enumerate(scores, start=1) if s >= threshold]
    return {"design_id": unit.design_id, "module_label": label, "buggy_line_nos": buggy}


# --- dataset assembly from store + label sets ---

def build_module_dataset(store, module_labels: ModuleLabelSet,
                         label_space: tuple[str, ...] | None = None) -> Dataset:
    rows = sorted(module_labels.labels)
    feats, labs = [], []
    for design_id in rows:
        if not store.contains(design_id, "MODULE"):
            raise MissingEmbeddings(f"no module embedding for {design_id}")
        feats.append(store.get(design_id, "MODULE"))
        labs.append(module_labels.labels[design_id])
    return Dataset(
        features=np.asarray(feats), labels=labs, groups=list(rows),
        row_ids=list(rows), label_space=label_space,
    )


def build_line_dataset(store, line_labels: LineLabelSet, combine: bool = True) -> Dataset:
    """Rows ordered by (design_id, line_no); features are line||module when
    combine is set, bare line embeddings otherwise."""
    keys = sorted(line_labels.labels)
    feats, labs, groups = [], [], []
    module_cache: dict[str, np.ndarray] = {}
    for design_id, line_no in keys:
        if not store.contains(design_id, "LINE", line_no):
            raise MissingEmbeddings(f"no embedding for {design_id} line {line_no}")
        line_vec = store.get(design_id, "LINE", line_no)
        if combine:
            if design_id not in module_cache:
                if not store.contains(design_id, "MODULE"):
                    raise MissingEmbeddings(f"no module embedding for {design_id}")
                module_cache[design_id] = store.get(design_id, "MODULE")
            feats.append(np.concatenate([line_vec, module_cache[design_id]]))
        else:
            feats.append(line_vec)
        labs.append(int(line_labels.labels[(design_id, line_no)]))
        groups.append(design_id)
    return Dataset(
        features=np.asarray(feats), labels=labs, groups=groups, row_ids=keys,
    )


# --- artifact io ---

_ARTIFACT_SCHEMA = "gbdt-model-v1"


def save_model(model: TrainedModel, path) -> None:
    payload = {
        "schema": _ARTIFACT_SCHEMA,
        "task": model.task,
        "label_space": list(model.label_space),
        "feature_dim": model.feature_dim,
        "config": asdict(model.config),
        "metadata": model.metadata,
        "ensembles": {lab: ens.to_dict() for lab, ens in model.ensembles.items()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)


def load_model(path) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("schema") != _ARTIFACT_SCHEMA:
        raise ValueError(f"unknown model schema {payload.get('schema')!r}")
    return TrainedModel(
        task=payload["task"],
        label_space=tuple(payload["label_space"]),
        ensembles={
            lab: gbdt.BoostedEnsemble.from_dict(d)
            for lab, d in payload["ensembles"].items()
        },
        config=GbdtConfig(**payload["config"]),
        feature_dim=payload["feature_dim"],
        metadata=payload["metadata"],
    )

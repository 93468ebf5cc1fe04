"""Metric suite: per-class precision/recall/F1/support, aggregates, confusion
matrices, PR curves, threshold sweeps, and report rendering.

Conventions: zero-denominator precision/recall are 0, except the empty-
prediction endpoint of a PR curve where precision is 1 by convention.
Macro averages run over every label in the space (zero-support classes
contribute 0); balanced accuracy averages recalls over classes with support.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLabels, LengthMismatch, UnknownLabel

REPORT_SCHEMA = "report-v1"


@dataclass
class ConfusionMatrix:
    label_space: tuple[str, ...]
    counts: np.ndarray  # rows = true, columns = predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.label_space)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts must be {k}x{k}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricTriple:
    precision: float
    recall: float
    f1: float


@dataclass
class Aggregates:
    accuracy: float
    macro_avg: MetricTriple
    weighted_avg: MetricTriple
    balanced_accuracy: float


@dataclass
class EvaluationReport:
    per_class: list[ClassMetrics]
    accuracy: float
    macro_avg: MetricTriple
    weighted_avg: MetricTriple
    balanced_accuracy: float
    confusion: ConfusionMatrix
    pr_points: list[tuple[float, float, float]] = field(default_factory=list)
    sweep_rows: list[dict] = field(default_factory=list)


def confusion(gold, predicted, label_space) -> ConfusionMatrix:
    gold = list(gold)
    predicted = list(predicted)
    if len(gold) != len(predicted):
        raise LengthMismatch(f"{len(gold)} gold labels vs {len(predicted)} predictions")
    space = tuple(str(x) for x in label_space)
    index = {lab: i for i, lab in enumerate(space)}
    counts = np.zeros((len(space), len(space)), dtype=np.int64)
    for g, p in zip(gold, predicted):
        g, p = str(g), str(p)
        if g not in index:
            raise UnknownLabel(f"gold label {g!r} not in label space")
        if p not in index:
            raise UnknownLabel(f"predicted label {p!r} not in label space")
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(space, counts)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def class_metrics(cm: ConfusionMatrix) -> list[ClassMetrics]:
    out = []
    for i, label in enumerate(cm.label_space):
        tp = int(cm.counts[i, i])
        fp = int(cm.counts[:, i].sum()) - tp
        fn = int(cm.counts[i, :].sum()) - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        out.append(ClassMetrics(label, precision, recall, f1_score(precision, recall), tp + fn))
    return out


def aggregate(per_class: list[ClassMetrics], cm: ConfusionMatrix) -> Aggregates:
    total = cm.total
    accuracy = float(np.trace(cm.counts)) / total if total else 0.0
    k = len(per_class)
    macro = MetricTriple(
        precision=sum(c.precision for c in per_class) / k,
        recall=sum(c.recall for c in per_class) / k,
        f1=sum(c.f1 for c in per_class) / k,
    )
    support_total = sum(c.support for c in per_class)
    if support_total:
        weighted = MetricTriple(
            precision=sum(c.precision * c.support for c in per_class) / support_total,
            recall=sum(c.recall * c.support for c in per_class) / support_total,
            f1=sum(c.f1 * c.support for c in per_class) / support_total,
        )
    else:
        weighted = MetricTriple(0.0, 0.0, 0.0)
    with_support = [c for c in per_class if c.support > 0]
    balanced = (
        sum(c.recall for c in with_support) / len(with_support) if with_support else 0.0
    )
    return Aggregates(accuracy, macro, weighted, balanced)


def _binary_counts(scores, gold, threshold: float):
    tp = fp = fn = tn = 0
    for s, g in zip(scores, gold):
        pred = 1 if s >= threshold else 0
        if pred and g:
            tp += 1
        elif pred and not g:
            fp += 1
        elif not pred and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def _check_binary(scores, gold):
    scores = [float(s) for s in scores]
    gold = [int(g) for g in gold]
    if len(scores) != len(gold):
        raise LengthMismatch(f"{len(scores)} scores vs {len(gold)} labels")
    if set(gold) - {0, 1}:
        raise ValueError("gold labels must be 0/1")
    if 1 not in gold or 0 not in gold:
        raise DegenerateLabels("need both positive and negative gold labels")
    return scores, gold


def pr_curve(scores, gold) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) at every distinct score plus endpoints.

    Predicting positive means score >= threshold. The below-minimum endpoint
    recalls everything; above the maximum score nothing is predicted and
    precision is 1.0 by convention.
    """
    scores, gold = _check_binary(scores, gold)
    thresholds = [0.0] + sorted(set(scores)) + [math.nextafter(max(scores), math.inf)]
    points = []
    for t in thresholds:
        tp, fp, fn, _ = _binary_counts(scores, gold, t)
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        points.append((t, precision, recall))
    return points


def threshold_sweep(scores, gold, grid) -> list[dict]:
    """One row per grid threshold: P, R, F1, FP, FN under score >= threshold."""
    scores, gold = _check_binary(scores, gold)
    rows = []
    for t in grid:
        tp, fp, fn, _ = _binary_counts(scores, gold, float(t))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        rows.append(
            {
                "threshold": float(t),
                "precision": precision,
                "recall": recall,
                "f1": f1_score(precision, recall),
                "fp": fp,
                "fn": fn,
            }
        )
    return rows


def evaluate_predictions(
    gold,
    predicted,
    label_space,
    scores=None,
    sweep_grid=None,
) -> EvaluationReport:
    """Full report from label sequences; scores add PR/threshold curves
    (binary tasks only, gold interpreted as 0/1)."""
    cm = confusion(gold, predicted, label_space)
    per_class = class_metrics(cm)
    agg = aggregate(per_class, cm)
    pr_points: list[tuple[float, float, float]] = []
    sweep_rows: list[dict] = []
    if scores is not None:
        pr_points = pr_curve(scores, gold)
        grid = sweep_grid if sweep_grid is not None else [i / 20 for i in range(21)]
        sweep_rows = threshold_sweep(scores, gold, grid)
    return EvaluationReport(
        per_class=per_class,
        accuracy=agg.accuracy,
        macro_avg=agg.macro_avg,
        weighted_avg=agg.weighted_avg,
        balanced_accuracy=agg.balanced_accuracy,
        confusion=cm,
        pr_points=pr_points,
        sweep_rows=sweep_rows,
    )


# --- serialization / rendering ---

def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "per_class": [
            {
                "label": c.label,
                "precision": c.precision,
                "recall": c.recall,
                "f1": c.f1,
                "support": c.support,
            }
            for c in report.per_class
        ],
        "accuracy": report.accuracy,
        "macro_avg": vars(report.macro_avg),
        "weighted_avg": vars(report.weighted_avg),
        "balanced_accuracy": report.balanced_accuracy,
        "confusion": {
            "label_space": list(report.confusion.label_space),
            "counts": report.confusion.counts.tolist(),
        },
        "pr_curve": [list(p) for p in report.pr_points],
        "threshold_sweep": report.sweep_rows,
    }


def report_from_dict(d: dict) -> EvaluationReport:
    if d.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"unknown report schema {d.get('schema')!r}")
    cm = ConfusionMatrix(
        tuple(d["confusion"]["label_space"]), np.asarray(d["confusion"]["counts"])
    )
    return EvaluationReport(
        per_class=[
            ClassMetrics(c["label"], c["precision"], c["recall"], c["f1"], c["support"])
            for c in d["per_class"]
        ],
        accuracy=d["accuracy"],
        macro_avg=MetricTriple(**d["macro_avg"]),
        weighted_avg=MetricTriple(**d["weighted_avg"]),
        balanced_accuracy=d["balanced_accuracy"],
        confusion=cm,
        pr_points=[tuple(p) for p in d["pr_curve"]],
        sweep_rows=list(d["threshold_sweep"]),
    )


def format_text_table(report: EvaluationReport) -> str:
    """Aligned per-class table plus the three aggregate rows."""
    width = max([len("Class")] + [len(c.label) for c in report.per_class] + [len("Weighted Avg")])
    lines = [f"{'Class':<{width}}  {'Prec.':>6}  {'Rec.':>6}  {'F1':>6}  {'Sup.':>6}"]
    for c in report.per_class:
        lines.append(
            f"{c.label:<{width}}  {c.precision:6.3f}  {c.recall:6.3f}  {c.f1:6.3f}  {c.support:6d}"
        )
    total = report.confusion.total
    lines.append(f"{'Accuracy':<{width}}  {'':6}  {'':6}  {report.accuracy:6.3f}  {total:6d}")
    m, w = report.macro_avg, report.weighted_avg
    lines.append(f"{'Macro Avg':<{width}}  {m.precision:6.3f}  {m.recall:6.3f}  {m.f1:6.3f}  {total:6d}")
    lines.append(f"{'Weighted Avg':<{width}}  {w.precision:6.3f}  {w.recall:6.3f}  {w.f1:6.3f}  {total:6d}")
    return "\n".join(lines) + "\n"


def render_report(report: EvaluationReport, out_dir, formats=("json", "txt", "csv")) -> list:
    """Write report artifacts; returns the paths written.

    json: machine-readable report (always recommended). txt: aligned table.
    csv: PR curve and threshold sweep points. png: PR curve, confusion
    heatmap, FP/FN bars (needs matplotlib).
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        path = out / "report.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report_to_dict(report), f, sort_keys=True, indent=1)
        written.append(path)
    if "txt" in formats:
        path = out / "report.txt"
        path.write_text(format_text_table(report), encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        if report.pr_points:
            path = out / "pr_curve.csv"
            with open(path, "w", newline="", encoding="utf-8") as f:
                w = csv.writer(f)
                w.writerow(["threshold", "precision", "recall"])
                w.writerows(report.pr_points)
            written.append(path)
        if report.sweep_rows:
            path = out / "threshold_sweep.csv"
            with open(path, "w", newline="", encoding="utf-8") as f:
                w = csv.writer(f)
                w.writerow(["threshold", "precision", "recall", "f1", "fp", "fn"])
                for r in report.sweep_rows:
                    w.writerow([r["threshold"], r["precision"], r["recall"], r["f1"], r["fp"], r["fn"]])
            written.append(path)
    if "png" in formats:
        written.extend(_render_plots(report, out))
    return written


def _render_plots(report: EvaluationReport, out) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    meta = {"Software": "vericwety"}  # no timestamps: plots stay byte-stable
    written = []

    fig, ax = plt.subplots(figsize=(5, 4))
    cm = report.confusion
    ax.imshow(cm.counts, cmap="Blues")
    ax.set_xticks(range(len(cm.label_space)), cm.label_space, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(cm.label_space)), cm.label_space, fontsize=7)
    for i in range(len(cm.label_space)):
        for j in range(len(cm.label_space)):
            ax.text(j, i, str(cm.counts[i, j]), ha="center", va="center", fontsize=7)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    fig.tight_layout()
    path = out / "confusion_matrix.png"
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    written.append(path)

    if report.pr_points:
        fig, ax = plt.subplots(figsize=(5, 4))
        recalls = [p[2] for p in report.pr_points]
        precisions = [p[1] for p in report.pr_points]
        ax.plot(recalls, precisions, marker=".", linewidth=1)
        ax.set_xlabel("Recall")
        ax.set_ylabel("Precision")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        fig.tight_layout()
        path = out / "pr_curve.png"
        fig.savefig(path, metadata=meta)
        plt.close(fig)
        written.append(path)

    if report.sweep_rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        ts = [r["threshold"] for r in report.sweep_rows]
        width = (max(ts) - min(ts)) / max(len(ts), 1) * 0.4 if len(ts) > 1 else 0.02
        ax.bar([t - width / 2 for t in ts], [r["fp"] for r in report.sweep_rows],
               width=width, label="FP")
        ax.bar([t + width / 2 for t in ts], [r["fn"] for r in report.sweep_rows],
               width=width, label="FN")
        ax.set_xlabel("Threshold")
        ax.set_ylabel("Count")
        ax.legend()
        fig.tight_layout()
        path = out / "fp_fn.png"
        fig.savefig(path, metadata=meta)
        plt.close(fig)
        written.append(path)
    return written

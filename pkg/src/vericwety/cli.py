"""Command-line entry point.

    vericwety <command> --config <path> [--seed N] [--threshold X]
              [--backend fallback|remote] [--out DIR]

Commands compose through on-disk artifacts (see FORMATS.md): label writes the
vote log and label datasets, embed populates the vector store, split freezes
the train/test partition, train/evaluate/predict consume all of the above.
Exit codes: 0 success, 1 operational error, 2 missing prerequisite artifact.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import classifier, corpus, embeddings, evaluation, labeling
from .config import PipelineConfig, append_run_manifest
from .errors import ArtifactMissing, VeriCwetyError
from .store import EmbeddingStore

log = logging.getLogger("vericwety")

VOTE_LOG = "vote_log.jsonl"
MODULE_LABELS = "module_labels.jsonl"
LINE_LABELS = "line_labels.jsonl"
CORPUS_MANIFEST = "corpus_manifest.jsonl"
SPLITS = "splits.json"
STORE_DIR = "store"
MODEL_MODULE = "model_module.json"
MODEL_LINE = "model_line.json"
MODEL_LINE_ONLY = "model_line_lineonly.json"


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise ArtifactMissing(f"{path} not found; run `vericwety {hint}` first")
    return path


def _load_units(cfg: PipelineConfig):
    return corpus.load_corpus(cfg.corpus)


def cmd_label(cfg: PipelineConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    units = _load_units(cfg)
    corpus.save_manifest(corpus.build_manifest(units), out / CORPUS_MANIFEST)
    providers = cfg.make_providers()
    labels = labeling.taxonomy(cfg.taxonomy)
    template = cfg.load_prompt_template() or labeling.DEFAULT_PROMPT_TEMPLATE
    votes = labeling.label_corpus(
        providers, units, labels, template=template, max_workers=cfg.workers,
        min_interval_s=float(cfg.providers.get("min_interval_s", 0.0)),
    )
    labeling.save_vote_log(votes, out / VOTE_LOG)
    module_set, line_set = labeling.build_label_dataset(units, votes)
    labeling.save_module_labels(module_set, out / MODULE_LABELS)
    labeling.save_line_labels(line_set, out / LINE_LABELS)
    print(
        f"labeled {len(module_set.labels)} designs "
        f"({module_set.excluded_unresolved} UNRESOLVED excluded); "
        f"{line_set.positives()} of {len(line_set.labels)} lines flagged"
    )
    append_run_manifest(
        out, "label", cfg, inputs=[],
        outputs=[out / CORPUS_MANIFEST, out / VOTE_LOG, out / MODULE_LABELS, out / LINE_LABELS],
    )
    return 0


def cmd_embed(cfg: PipelineConfig) -> int:
    out = Path(cfg.out_dir)
    units = _load_units(cfg)
    backend = cfg.make_backend()
    store = EmbeddingStore.open_or_create(out / STORE_DIR, backend.info)
    try:
        done = embeddings.embed_corpus(backend, units, store, max_workers=cfg.workers)
    finally:
        store.close()  # partial progress stays on disk
    total = sum(u.line_count for u in units) + len(units)
    print(f"embedded {done} designs ({len(store)} of {total} vectors in store)")
    append_run_manifest(
        out, "embed", cfg, inputs=[out / CORPUS_MANIFEST],
        outputs=[out / STORE_DIR / "index.json"],
    )
    return 0


def _open_store(cfg: PipelineConfig) -> EmbeddingStore:
    path = Path(cfg.out_dir) / STORE_DIR
    _require(path / "index.json", "embed")
    return EmbeddingStore.open(path, cfg.make_backend().info)


def _load_label_sets(cfg: PipelineConfig):
    out = Path(cfg.out_dir)
    module_set = labeling.load_module_labels(_require(out / MODULE_LABELS, "label"))
    line_set = labeling.load_line_labels(_require(out / LINE_LABELS, "label"))
    return module_set, line_set


def cmd_split(cfg: PipelineConfig) -> int:
    out = Path(cfg.out_dir)
    module_set, line_set = _load_label_sets(cfg)
    store = _open_store(cfg)
    label_space = labeling.taxonomy(cfg.taxonomy)
    module_ds = classifier.build_module_dataset(store, module_set, label_space)
    module_train, module_test = classifier.split_dataset(
        module_ds,
        classifier.SplitSpec(cfg.split.train_fraction, cfg.split.seed, cfg.split.module_strategy),
    )
    line_ds = classifier.build_line_dataset(store, line_set, combine=False)
    line_train, line_test = classifier.split_dataset(
        line_ds,
        classifier.SplitSpec(cfg.split.train_fraction, cfg.split.seed, cfg.split.line_strategy),
    )
    payload = {
        "seed": cfg.split.seed,
        "train_fraction": cfg.split.train_fraction,
        "module": {"train": sorted(module_train.row_ids), "test": sorted(module_test.row_ids)},
        "line": {
            "train_designs": sorted(set(line_train.groups)),
            "test_designs": sorted(set(line_test.groups)),
        },
    }
    with open(out / SPLITS, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
    print(
        f"module split {len(module_train)}/{len(module_test)}; "
        f"line split {len(line_train)}/{len(line_test)} rows "
        f"({len(payload['line']['train_designs'])}/{len(payload['line']['test_designs'])} designs)"
    )
    append_run_manifest(out, "split", cfg, inputs=[out / MODULE_LABELS, out / LINE_LABELS],
                        outputs=[out / SPLITS])
    return 0


def _load_splits(cfg: PipelineConfig) -> dict:
    path = _require(Path(cfg.out_dir) / SPLITS, "split")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _module_datasets(cfg, store, module_set, splits):
    label_space = labeling.taxonomy(cfg.taxonomy)
    ds = classifier.build_module_dataset(store, module_set, label_space)
    train_ids = set(splits["module"]["train"])
    test_ids = set(splits["module"]["test"])
    train_idx = [i for i, rid in enumerate(ds.row_ids) if rid in train_ids]
    test_idx = [i for i, rid in enumerate(ds.row_ids) if rid in test_ids]
    return ds.subset(train_idx), ds.subset(test_idx)


def _line_datasets(cfg, store, line_set, splits, combine: bool):
    ds = classifier.build_line_dataset(store, line_set, combine=combine)
    train_groups = set(splits["line"]["train_designs"])
    test_groups = set(splits["line"]["test_designs"])
    train_idx = [i for i, g in enumerate(ds.groups) if g in train_groups]
    test_idx = [i for i, g in enumerate(ds.groups) if g in test_groups]
    return ds.subset(train_idx), ds.subset(test_idx)


def cmd_train(cfg: PipelineConfig, task: str, line_features: str = "combined") -> int:
    out = Path(cfg.out_dir)
    module_set, line_set = _load_label_sets(cfg)
    store = _open_store(cfg)
    splits = _load_splits(cfg)
    gbdt_cfg = cfg.gbdt_config()
    if task == "module":
        train_ds, _ = _module_datasets(cfg, store, module_set, splits)
        model = classifier.train(train_ds, gbdt_cfg, classifier.MODULE_MULTICLASS,
                                 split_seed=splits["seed"])
        path = out / MODEL_MODULE
    else:
        combine = line_features == "combined"
        train_ds, _ = _line_datasets(cfg, store, line_set, splits, combine)
        model = classifier.train(train_ds, gbdt_cfg, classifier.LINE_BINARY,
                                 split_seed=splits["seed"])
        path = out / (MODEL_LINE if combine else MODEL_LINE_ONLY)
    classifier.save_model(model, path)
    losses = next(iter(model.ensembles.values())).train_log_loss
    print(f"trained {task} model on {model.metadata['n_examples']} examples "
          f"(final train log-loss {losses[-1]:.4f}) -> {path}")
    append_run_manifest(out, f"train-{task}", cfg,
                        inputs=[out / SPLITS, out / MODULE_LABELS, out / LINE_LABELS],
                        outputs=[path])
    return 0


def cmd_evaluate(cfg: PipelineConfig, task: str, line_features: str = "combined") -> int:
    out = Path(cfg.out_dir)
    module_set, line_set = _load_label_sets(cfg)
    store = _open_store(cfg)
    splits = _load_splits(cfg)
    if task == "module":
        model = classifier.load_model(_require(out / MODEL_MODULE, "train module"))
        _, test_ds = _module_datasets(cfg, store, module_set, splits)
        pred = classifier.predict_label(model, test_ds.features, cfg.threshold)
        space = model.label_space
        report = evaluation.evaluate_predictions(test_ds.labels, pred, space)
        report_dir = out / "eval_module"
    else:
        combine = line_features == "combined"
        model_path = out / (MODEL_LINE if combine else MODEL_LINE_ONLY)
        model = classifier.load_model(_require(model_path, "train line"))
        _, test_ds = _line_datasets(cfg, store, line_set, splits, combine)
        scores = classifier.predict_proba(model, test_ds.features)
        pred = (scores >= cfg.threshold).astype(int)
        report = evaluation.evaluate_predictions(
            test_ds.labels, pred.tolist(), ("0", "1"), scores=scores.tolist()
        )
        report_dir = out / ("eval_line" if combine else "eval_line_lineonly")
    written = evaluation.render_report(report, report_dir, formats=("json", "txt", "csv", "png"))
    print(evaluation.format_text_table(report), end="")
    print(f"report written to {report_dir}")
    append_run_manifest(out, f"evaluate-{task}", cfg, inputs=[out / SPLITS],
                        outputs=list(written))
    return 0


def cmd_predict(cfg: PipelineConfig, design_id: str) -> int:
    out = Path(cfg.out_dir)
    module_model = classifier.load_model(_require(out / MODEL_MODULE, "train module"))
    line_model = classifier.load_model(_require(out / MODEL_LINE, "train line"))
    store = _open_store(cfg)
    units = {u.design_id: u for u in _load_units(cfg)}
    if design_id not in units:
        raise VeriCwetyError(f"design {design_id!r} not in corpus")
    result = classifier.predict_design(
        module_model, line_model, units[design_id], store, cfg.threshold
    )
    print(json.dumps(result))
    return 0


def cmd_agreement(cfg: PipelineConfig, gold_path: str | None) -> int:
    out = Path(cfg.out_dir)
    votes = labeling.load_vote_log(_require(out / VOTE_LOG, "label"))
    if gold_path:
        gold = labeling.load_module_labels(gold_path).labels
    else:
        gold = labeling.load_module_labels(_require(out / MODULE_LABELS, "label")).labels
    verdicts = [v for vote in votes for v in vote.verdicts if vote.design_id in gold]
    report = labeling.provider_agreement_report(verdicts, gold)
    path = out / "agreement.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=1)
    print(f"{'Provider':<24} {'Total':>6} {'Mismatches':>11} {'Correct%':>9}")
    for pid in sorted(report):
        row = report[pid]
        print(f"{pid:<24} {row['total']:>6} {row['mismatches']:>11} {row['correct_pct']:>8.1f}%")
    append_run_manifest(out, "agreement", cfg, inputs=[out / VOTE_LOG], outputs=[path])
    return 0


def cmd_report(cfg: PipelineConfig, eval_dir: str) -> int:
    path = Path(eval_dir) / "report.json"
    _require(path, "evaluate")
    with open(path, "r", encoding="utf-8") as f:
        report = evaluation.report_from_dict(json.load(f))
    written = evaluation.render_report(report, eval_dir, formats=("txt", "csv", "png"))
    print(f"re-rendered {len(written)} artifact(s) in {eval_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vericwety", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override split seed and model random_state")
        p.add_argument("--threshold", type=float, help="override decision threshold")
        p.add_argument("--backend", choices=["fallback", "remote"], help="override backend type")
        p.add_argument("--out", help="override output directory")
        return p

    common(sub.add_parser("label", help="query providers and vote"))
    common(sub.add_parser("embed", help="populate the embedding store"))
    common(sub.add_parser("split", help="freeze the train/test partition"))
    p = common(sub.add_parser("train", help="train a classifier"))
    p.add_argument("--task", choices=["module", "line"], required=True)
    p.add_argument("--line-features", choices=["combined", "line_only"], default="combined")
    p = common(sub.add_parser("evaluate", help="evaluate on the held-out split"))
    p.add_argument("--task", choices=["module", "line"], required=True)
    p.add_argument("--line-features", choices=["combined", "line_only"], default="combined")
    p = common(sub.add_parser("predict", help="two-stage prediction for one design"))
    p.add_argument("--design", required=True)
    p = common(sub.add_parser("agreement", help="per-provider mismatch table"))
    p.add_argument("--gold", help="gold module labels (defaults to the voted labels)")
    p = common(sub.add_parser("report", help="re-render report artifacts"))
    p.add_argument("--eval-dir", required=True)
    return parser


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if args.seed is not None:
        cfg.split.seed = args.seed
        cfg.gbdt = dict(cfg.gbdt, random_state=args.seed)
    if args.threshold is not None:
        cfg.threshold = args.threshold
    if args.backend is not None:
        cfg.backend = dict(cfg.backend, type=args.backend)
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(PipelineConfig.load(args.config), args)
        if args.command == "label":
            return cmd_label(cfg)
        if args.command == "embed":
            return cmd_embed(cfg)
        if args.command == "split":
            return cmd_split(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.task, args.line_features)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.task, args.line_features)
        if args.command == "predict":
            return cmd_predict(cfg, args.design)
        if args.command == "agreement":
            return cmd_agreement(cfg, args.gold)
        if args.command == "report":
            return cmd_report(cfg, args.eval_dir)
        raise VeriCwetyError(f"unknown command {args.command!r}")
    except ArtifactMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VeriCwetyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

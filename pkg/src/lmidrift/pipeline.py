"""The ratio sweep: train a checkpoint per (ratio, seed), evaluate it on every
test split, explain a fixed subsample of each split, and turn the
explanations into PB, AOPC, per-label LMI distributions and KL drift.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, kernels
from .config import EXTERNAL, ExperimentConfig, _ratio_key, worker_count
from .corpus import (LabeledCorpus, average_encoded_length, build_vocabulary, encode, label_counts,
                     load_jsonl, subsample)
from .errors import ConfigError, LmiDriftError
from .explain import explain, example_seed, write_attributions
from .metrics import (aopc, auto_k, kld, lmi_distribution, pool_data_features, pool_model_features,
                      prediction_bias)
from .models import Checkpoint, evaluate, init_model, train
from .plots import plot_confusion, plot_lmi_points

log = logging.getLogger(__name__)

REPORT_FORMAT = "lmidrift-report"
TIMESTAMP_KEYS = ("created_at", "finished_at")


@dataclass
class DiagnosticsReport:
    metadata: dict
    config: dict
    labels: list
    splits: list
    cells: list
    aggregate: list
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "metadata": self.metadata, "config": self.config,
                "labels": self.labels, "splits": self.splits, "cells": self.cells,
                "aggregate": self.aggregate, "failures": self.failures}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data) -> "DiagnosticsReport":
        if data.get("format") != REPORT_FORMAT:
            raise ValueError("not an lmidrift report")
        return cls(data["metadata"], data["config"], data["labels"], data["splits"], data["cells"],
                   data["aggregate"], data.get("failures", []))

    @classmethod
    def from_json(cls, text: str) -> "DiagnosticsReport":
        return cls.from_dict(json.loads(text))

    def cell(self, ratio, seed) -> dict:
        for c in self.cells:
            if c["ratio"] == ratio and c["seed"] == seed:
                return c
        raise KeyError((ratio, seed))

    def aggregated(self, ratio, split) -> dict:
        for a in self.aggregate:
            if a["ratio"] == ratio and a["split"] == split:
                return a
        raise KeyError((ratio, split))


def strip_timestamps(report_dict: dict) -> dict:
    out = json.loads(json.dumps(report_dict))
    for key in TIMESTAMP_KEYS:
        out["metadata"].pop(key, None)
    return out


# -- setup -----------------------------------------------------------------

@dataclass
class _Context:
    config: ExperimentConfig
    train: LabeledCorpus
    splits: dict
    vocab: object
    k: int
    out_dir: Optional[Path]


def _load(config: ExperimentConfig, out_dir: Optional[Path]) -> _Context:
    train_set = load_jsonl(config.resolve(config.train), config.schema, split_name="train")
    splits = {"test": load_jsonl(config.resolve(config.test), config.schema, labels=train_set.labels,
                                 split_name="test")}
    if config.ood_test:
        splits["ood_test"] = load_jsonl(config.resolve(config.ood_test), config.schema, labels=train_set.labels,
                                        split_name="ood_test")
    vocab = build_vocabulary(train_set, config.min_freq)
    k = auto_k(average_encoded_length(train_set, config.max_len)) if config.k == "auto" else int(config.k)
    return _Context(config, train_set, splits, vocab, k, out_dir)


def explanation_subset(corpus: LabeledCorpus, size: int, seed: int, split: str) -> list:
    """Seeded subsample of document positions, drawn once per (seed, split)
    and shared by every ratio."""
    n = len(corpus)
    if size >= n:
        return list(range(n))
    rng = np.random.default_rng(example_seed(seed, f"explain-subset:{split}"))
    return sorted(rng.choice(n, size=size, replace=False).tolist())


def _predictor(ctx: _Context, seed: int, ratio: float):
    cfg = ctx.config
    if cfg.model == EXTERNAL:
        from .protocol import ExternalPredictor
        return ExternalPredictor(cfg.endpoints[_ratio_key(ratio)], vocab=ctx.vocab), None
    ck0 = init_model(cfg.model, ctx.vocab, ctx.train.num_classes, cfg.embed_dim, seed, ctx.train.labels)
    if ratio == 0:
        return ck0, None
    few = subsample(ctx.train, ratio, seed)
    if len(few) == 0:
        raise _Skip(f"subsample of {len(ctx.train)} documents at r={ratio}% is empty")
    return train(ck0, few, cfg.hyper, seed=seed, ratio=ratio, max_len=cfg.max_len), few


class _Skip(LmiDriftError):
    pass


def _fmt_ratio(r) -> str:
    return format(float(r), "g")


# -- one (ratio, seed) cell ------------------------------------------------

def _run_cell(ctx: _Context, seed: int, ratio: float) -> dict:
    cfg = ctx.config
    result = {"ratio": ratio, "seed": seed, "status": "ok", "splits": {}, "_dists": {}, "_data": None}
    predictor, few = _predictor(ctx, seed, ratio)
    try:
        result["train_size"] = 0 if few is None else len(few)
        if few is None and ratio > 0:
            few = subsample(ctx.train, ratio, seed)
        if ctx.out_dir is not None and isinstance(predictor, Checkpoint):
            path = ctx.out_dir / "checkpoints" / f"seed{seed}" / f"r{_fmt_ratio(ratio)}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            predictor.save(path)
            result["checkpoint"] = str(path.relative_to(ctx.out_dir))

        if few is not None and len(few):
            data_pool = pool_data_features(few, ctx.vocab)
            result["_data"] = {y: lmi_distribution(data_pool, ctx.vocab, y, cfg.negative_lmi)
                               for y in range(ctx.train.num_classes)}

        exp = dict(cfg.explanation)
        method = exp.pop("method")
        for split, corpus in ctx.splits.items():
            ev = evaluate(predictor, corpus, ctx.vocab, cfg.max_len)
            bias = prediction_bias(ev.prediction_counts, label_counts(corpus))
            subset = explanation_subset(corpus, cfg.sample_size, seed, split)
            attrs, examples = [], []
            for i in subset:
                doc = corpus.documents[i]
                ids = encode(doc, ctx.vocab, cfg.max_len)
                attr = explain(predictor, ids, method, seed=example_seed(seed, doc.id), doc_id=doc.id, **exp)
                attrs.append(attr)
                examples.append((ids, attr.cls, attr))
            scores = {method: aopc(predictor, examples, cfg.U)}
            for base in cfg.aopc_baselines:
                if base == method:
                    continue
                base_examples = [(ids, cls, explain(predictor, ids, base, cls=cls,
                                                    seed=example_seed(seed, f"{base}:{a.doc_id}"),
                                                    doc_id=a.doc_id, **exp))
                                 for ids, cls, a in examples]
                scores[base] = aopc(predictor, base_examples, cfg.U)

            pool = pool_model_features(attrs, ctx.k)
            dists = {}
            if pool.size:
                dists = {y: lmi_distribution(pool, ctx.vocab, y, cfg.negative_lmi)
                         for y in range(ctx.train.num_classes)}
            explained_counts = np.bincount([a.cls for a in attrs], minlength=ctx.train.num_classes)
            result["splits"][split] = {
                "accuracy": ev.accuracy,
                "confusion": ev.confusion.tolist(),
                "prediction_counts": ev.prediction_counts.tolist(),
                "bias": bias.to_dict(),
                "aopc": scores,
                "explained": len(attrs),
                "explained_prediction_counts": explained_counts.tolist(),
                "pool_size": pool.size,
            }
            result["_dists"][split] = dists
            if ctx.out_dir is not None:
                path = ctx.out_dir / "attributions" / split / f"seed{seed}_r{_fmt_ratio(ratio)}.jsonl"
                path.parent.mkdir(parents=True, exist_ok=True)
                write_attributions(path, attrs)
    finally:
        if hasattr(predictor, "close"):
            predictor.close()
    return result


def _safe_cell(ctx, seed, ratio) -> dict:
    try:
        return _run_cell(ctx, seed, ratio)
    except _Skip as exc:
        return {"ratio": ratio, "seed": seed, "status": "skipped", "reason": str(exc)}
    except Exception as exc:  # per-cell failure policy: record and keep sweeping
        log.error("cell r=%s seed=%s failed: %s", ratio, seed, exc)
        return {"ratio": ratio, "seed": seed, "status": "failed", "reason": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc()}


# -- reduction -------------------------------------------------------------

def _sparse(dist, vocab) -> list:
    idx = np.flatnonzero(dist)
    return [[int(i), vocab.tokens[i], float(dist[i])] for i in idx]


def _label_block(ctx, cell, split, y, reference):
    cfg = ctx.config
    dist = cell["_dists"].get(split, {}).get(y)
    block = {"kld_ori": None, "kld_data": None, "top_lmi": [], "degenerate": dist is None or dist.degenerate,
             "notes": []}
    if dist is None or dist.degenerate:
        block["notes"].append("model explanations carry no positive LMI for this label")
        return block
    block["top_lmi"] = dist.top(ctx.vocab, cfg.top_n)
    if cell["ratio"] != 0:
        ref = reference.get(split, {}).get(y) if reference else None
        if ref is None or ref.degenerate:
            block["notes"].append("r=0 model never predicts this label; no Ori reference")
        else:
            block["kld_ori"] = kld(dist, ref, cfg.epsilon)
        data = (cell.get("_data") or {}).get(y)
        if data is None or data.degenerate:
            block["notes"].append("few-shot data carries no positive LMI for this label")
        else:
            block["kld_data"] = kld(dist, data, cfg.epsilon)
    return block


def _mean(values):
    vals = [v for v in values if v is not None]
    return (float(np.mean(vals)) if vals else None), len(vals)


def run_experiment(config: ExperimentConfig, out_dir=None, workers: Optional[int] = None) -> DiagnosticsReport:
    """Run the sweep. When ``out_dir`` is given, checkpoints and attribution
    dumps are written under it as the cells finish."""
    created = datetime.now(timezone.utc).isoformat()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    ctx = _load(config, out_dir)
    labels = list(ctx.train.labels)
    jobs = [(seed, ratio) for seed in config.seeds for ratio in config.ratios]
    workers = worker_count() if workers is None else max(1, workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(lambda job: _safe_cell(ctx, *job), jobs))
    else:
        raw = [_safe_cell(ctx, *job) for job in jobs]

    by_key = {(c["seed"], c["ratio"]): c for c in raw}
    cells, failures = [], []
    for seed, ratio in jobs:
        cell = by_key[(seed, ratio)]
        if cell["status"] != "ok":
            failures.append({k: cell[k] for k in ("ratio", "seed", "status", "reason")})
            cells.append({k: v for k, v in cell.items() if k != "traceback"})
            continue
        ref_cell = by_key.get((seed, 0))
        reference = ref_cell.get("_dists") if ref_cell and ref_cell["status"] == "ok" else None
        for split in ctx.splits:
            cell["splits"][split]["labels"] = {
                labels[y]: _label_block(ctx, cell, split, y, reference) for y in range(len(labels))}
        cells.append(cell)

    aggregate = []
    for ratio in config.ratios:
        for split in ctx.splits:
            ok = [c for c in cells if c["ratio"] == ratio and c["status"] == "ok"]
            entry = {"ratio": ratio, "split": split, "n_seeds": len(ok), "seeds": [c["seed"] for c in ok]}
            if ok:
                blocks = [c["splits"][split] for c in ok]
                entry["accuracy"] = float(np.mean([b["accuracy"] for b in blocks]))
                entry["pb"] = float(np.mean([b["bias"]["pb"] for b in blocks]))
                entry["aopc"] = {m: float(np.mean([b["aopc"][m] for b in blocks])) for m in blocks[0]["aopc"]}
                entry["confusion"] = np.sum([b["confusion"] for b in blocks], axis=0).tolist()
                entry["labels"] = {}
                for y, name in enumerate(labels):
                    ko, n_ori = _mean([b["labels"][name]["kld_ori"] for b in blocks])
                    kd, n_data = _mean([b["labels"][name]["kld_data"] for b in blocks])
                    dists = [c["_dists"][split].get(y) for c in ok]
                    dists = [d.values for d in dists if d is not None and not d.degenerate]
                    mean_dist = np.mean(dists, axis=0) if dists else np.zeros(len(ctx.vocab))
                    order = np.lexsort((np.arange(len(mean_dist)), -mean_dist))
                    top = [ctx.vocab.tokens[i] for i in order[:config.top_n] if mean_dist[i] > 0]
                    entry["labels"][name] = {"kld_ori": ko, "n_ori": n_ori, "kld_data": kd, "n_data": n_data,
                                             "top_lmi": top, "lmi": _sparse(mean_dist, ctx.vocab)}
            aggregate.append(entry)

    for cell in cells:
        cell.pop("_dists", None)
        cell.pop("_data", None)

    metadata = {
        "package_version": __version__,
        "config_hash": config.digest(),
        "kernel_backend": kernels.BACKEND,
        "vocab_size": len(ctx.vocab),
        "vocab_sha256": ctx.vocab.digest(),
        "k": ctx.k,
        "split_sizes": {s: len(c) for s, c in ctx.splits.items()},
        "train_size": len(ctx.train),
        "created_at": created,
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    return DiagnosticsReport(metadata, config.to_dict(), labels, list(ctx.splits), cells, aggregate, failures)


# -- emission --------------------------------------------------------------

def _num(x, digits=6) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def preds_csv(report: DiagnosticsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "r", "dataset", "acc", "pb"])
    model = report.config["model"]
    for a in report.aggregate:
        if a["n_seeds"]:
            w.writerow([model, _fmt_ratio(a["ratio"]), a["split"], _num(a["accuracy"]), _num(a["pb"])])
    return buf.getvalue()


def kld_csv(report: DiagnosticsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "r", "dataset", "label", "kld_ori", "kld_data"])
    model = report.config["model"]
    for a in report.aggregate:
        if not a["n_seeds"]:
            continue
        for name in report.labels:
            b = a["labels"][name]
            w.writerow([model, _fmt_ratio(a["ratio"]), a["split"], name, _num(b["kld_ori"]), _num(b["kld_data"])])
    return buf.getvalue()


def top_features_txt(report: DiagnosticsReport) -> str:
    lines = []
    for split in report.splits:
        lines.append(f"# {split}")
        for a in report.aggregate:
            if a["split"] != split or not a["n_seeds"]:
                continue
            for name in report.labels:
                toks = a["labels"][name]["top_lmi"]
                lines.append(f"r={_fmt_ratio(a['ratio'])}\t{name}\t{' '.join(toks) if toks else '-'}")
        lines.append("")
    return "\n".join(lines)


def emit_report(report: DiagnosticsReport, out_dir) -> list:
    """Write report.json, preds.csv, kld.csv, top_features.txt and one SVG per
    (split, ratio) confusion matrix and per (split, ratio, label) LMI scatter."""
    if not report.config.get("ratios"):
        raise ConfigError("report has no ratios; nothing to emit")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise LmiDriftError(f"cannot create output directory {out}: {exc}") from exc
    written = []

    def put(name, text):
        path = out / name
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise LmiDriftError(f"cannot write {path}: {exc}") from exc
        written.append(path)

    put("report.json", report.to_json())
    put("preds.csv", preds_csv(report))
    put("kld.csv", kld_csv(report))
    put("top_features.txt", top_features_txt(report))
    if report.failures:
        put("failures.json", json.dumps(report.failures, indent=1, sort_keys=True) + "\n")
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    for a in report.aggregate:
        if not a["n_seeds"]:
            continue
        r = _fmt_ratio(a["ratio"])
        path = plots / f"confusion_{a['split']}_r{r}.svg"
        plot_confusion(a["confusion"], report.labels, path,
                       title=f"{report.config['model']} {a['split']} r={r}% (sum over {a['n_seeds']} seeds)")
        written.append(path)
        for name in report.labels:
            points = a["labels"][name]["lmi"]
            if not points:
                continue
            path = plots / f"lmi_{a['split']}_r{r}_{name}.svg"
            plot_lmi_points(points, report.metadata["vocab_size"], path,
                            title=f"LMI {name} {a['split']} r={r}%")
            written.append(path)
    return written


def load_report(path) -> DiagnosticsReport:
    return DiagnosticsReport.from_json(Path(path).read_text(encoding="utf-8"))

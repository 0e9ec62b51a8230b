"""Experiment harness: folds x budgets x methods, aggregation, reports.

Per-fold seeds are derived as base_seed + fold_index, so the whole report is
a pure function of (dataset bytes, config); cells are independent work items
and the output is identical no matter how many workers run them.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .data import BudgetSample, LabeledDataset, sample_label_budget, stratified_kfold
from .model import PearlConfig, train, transform
from .preprocessing import (
    l2_normalize,
    lda_apply,
    lda_fit,
    pca_whiten_apply,
    pca_whiten_fit,
    standardizer_apply,
    standardizer_fit,
)
from .prototypes import compute_prototypes

METHODS = ("raw", "l2", "pca_whiten_l2", "lda_l2", "pearl")
RETRIEVAL_METRICS = ("purity", "hit", "mrr")


@dataclass(frozen=True)
class ExperimentConfig:
    folds: int = 5
    budgets: tuple = (100, 300, 600, 1200, 2500, 5000)
    k_values: tuple = (1, 5, 10, 20)
    methods: tuple = METHODS
    base_seed: int = 0
    pearl: PearlConfig = field(default_factory=PearlConfig)
    jobs: int = 1

    def __post_init__(self):
        if not self.methods:
            raise ValueError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown method {unknown[0]!r}")
        if list(self.budgets) != sorted(self.budgets):
            raise ValueError("budgets must be ascending")
        if any(k < 1 for k in self.k_values):
            raise ValueError("k values must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class MetricRecord:
    method: str
    budget: int
    fold: int
    metric: str
    k: int  # 0 when not applicable
    value: float
    class_id: int | None = None  # set for per-class F1 records

    def to_json(self) -> dict:
        doc = {
            "method": self.method, "budget": self.budget, "fold": self.fold,
            "metric": self.metric, "k": self.k, "value": self.value,
        }
        if self.class_id is not None:
            doc["class_id"] = self.class_id
        return doc


@dataclass
class ReportTable:
    records: list[MetricRecord] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)
    notes: list[dict] = field(default_factory=list)  # e.g. whitening rank loss
    errors: list[dict] = field(default_factory=list)
    n_folds: int = 0


class MethodError(RuntimeError):
    """A method failed on one (fold, budget) cell; context in the message."""


def _pipeline_outputs(
    method: str,
    ds: LabeledDataset,
    test_rows: np.ndarray,
    sample: BudgetSample,
    pearl_cfg: PearlConfig,
    fold_seed: int,
    notes: list | None = None,
):
    """Apply one method's transform chain; returns (pool, pool_labels,
    queries, query_labels) ready for cosine retrieval."""
    x = ds.embeddings.values
    y = ds.labels
    tr, va = sample.train_indices, sample.val_indices
    scaler = standardizer_fit(x[tr])
    x_tr = standardizer_apply(scaler, x[tr])
    x_te = standardizer_apply(scaler, x[test_rows])

    if method == "raw":
        pool, queries = x_tr, x_te
    elif method == "l2":
        pool, queries = l2_normalize(x_tr), l2_normalize(x_te)
    elif method == "pca_whiten_l2":
        whitener = pca_whiten_fit(x_tr)
        if notes is not None and whitener.m < ds.d:
            notes.append({
                "note": True, "method": method, "budget": sample.budget,
                "detail": f"whitening kept {whitener.m} of {ds.d} dimensions",
            })
        pool = l2_normalize(pca_whiten_apply(whitener, x_tr))
        queries = l2_normalize(pca_whiten_apply(whitener, x_te))
    elif method == "lda_l2":
        projector = lda_fit(x_tr, y[tr])
        pool = l2_normalize(lda_apply(projector, x_tr))
        queries = l2_normalize(lda_apply(projector, x_te))
    elif method == "pearl":
        protos = compute_prototypes(x_tr, y[tr], ds.C)
        cfg = replace(pearl_cfg, seed=fold_seed).resolved(x.shape[1])
        x_va = standardizer_apply(scaler, x[va])
        params, _ = train(cfg, x_tr, y[tr], x_va, y[va], protos)
        pool = l2_normalize(transform(params, cfg, x_tr))
        queries = l2_normalize(transform(params, cfg, x_te))
    else:
        raise ValueError(f"unknown method {method!r}")
    return pool, y[tr], queries, y[test_rows]


def run_method_on_fold(
    method: str,
    ds: LabeledDataset,
    test_rows: np.ndarray,
    sample: BudgetSample,
    fold: int,
    k_values,
    pearl_cfg: PearlConfig,
    fold_seed: int,
    notes: list | None = None,
) -> list[MetricRecord]:
    """All metric records for one (method, fold, budget) cell."""
    try:
        pool, pool_labels, queries, query_labels = _pipeline_outputs(
            method, ds, test_rows, sample, pearl_cfg, fold_seed, notes
        )
        k_max = max(k_values)
        neighbors = metrics.top_k_neighbors(queries, pool, k_max)
        records = []
        for k in k_values:
            for name, fn in (
                ("purity", metrics.purity_at_k),
                ("hit", metrics.hit_at_k),
                ("mrr", metrics.mrr_at_k),
            ):
                records.append(MetricRecord(
                    method, sample.budget, fold, name, k,
                    fn(neighbors, query_labels, pool_labels, k),
                ))
        records.append(MetricRecord(
            method, sample.budget, fold, "delta_sep", 0,
            metrics.separation_delta(queries, query_labels),
        ))
        for k in k_values:
            for weighting in ("uniform", "distance"):
                pred = metrics.knn_predict(neighbors, pool_labels, k, weighting)
                for c in range(ds.C):
                    records.append(MetricRecord(
                        method, sample.budget, fold, f"f1_{weighting}", k,
                        metrics.f1_per_class(pred, query_labels, c), class_id=c,
                    ))
        return records
    except Exception as err:
        raise MethodError(
            f"method {method!r} failed on fold {fold}, budget {sample.budget}: {err}"
        ) from err


def _aggregate(records: list[MetricRecord], method_order) -> list[dict]:
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault((r.method, r.budget, r.metric, r.k, r.class_id), []).append(r.value)
    metric_rank = {m: i for i, m in enumerate(
        ("purity", "hit", "mrr", "delta_sep", "f1_uniform", "f1_distance"))}
    method_rank = {m: i for i, m in enumerate(method_order)}
    out = []
    for key in sorted(groups, key=lambda k: (
        method_rank[k[0]], k[1], metric_rank[k[2]], k[3], -1 if k[4] is None else k[4]
    )):
        vals = np.asarray(groups[key])
        doc = {
            "aggregate": True, "method": key[0], "budget": key[1],
            "metric": key[2], "k": key[3],
            "mean": float(vals.mean()), "std": float(vals.std()),
            "n_folds": int(vals.size),
        }
        if key[4] is not None:
            doc["class_id"] = key[4]
        out.append(doc)
    return out


def run_experiment(cfg: ExperimentConfig, ds: LabeledDataset) -> ReportTable:
    """Run the full protocol; failed cells land in the error manifest and the
    rest of the table is still produced."""
    plan = stratified_kfold(ds, cfg.folds, cfg.base_seed)
    table = ReportTable(n_folds=cfg.folds)

    cells = []
    for fold in range(cfg.folds):
        fold_seed = cfg.base_seed + fold
        test_rows = plan.test_rows(fold)
        train_rows = plan.train_rows(fold)
        for budget in cfg.budgets:
            try:
                sample = sample_label_budget(ds, train_rows, budget, fold_seed)
            except Exception as err:
                for method in cfg.methods:
                    table.errors.append({
                        "error": True, "fold": fold, "budget": budget,
                        "method": method, "message": str(err),
                    })
                continue
            for method in cfg.methods:
                cells.append((method, test_rows, sample, fold, fold_seed))

    def run_cell(cell):
        method, test_rows, sample, fold, fold_seed = cell
        cell_notes: list[dict] = []
        try:
            records = run_method_on_fold(
                method, ds, test_rows, sample, fold,
                cfg.k_values, cfg.pearl, fold_seed, notes=cell_notes,
            )
        except MethodError as err:
            return None, cell_notes, {
                "error": True, "fold": fold, "budget": sample.budget,
                "method": method, "message": str(err),
            }
        for note in cell_notes:
            note["fold"] = fold
        return records, cell_notes, None

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(c) for c in cells]

    for records, notes, error in outcomes:
        if error is not None:
            table.errors.append(error)
        else:
            table.records.extend(records)
            table.notes.extend(notes)
    table.aggregates = _aggregate(table.records, cfg.methods)
    return table


def write_jsonl(table: ReportTable, path) -> None:
    """One record per line, then aggregates, notes, and the error manifest."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in table.records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
        for doc in table.aggregates + table.notes + table.errors:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def render_tables(table: ReportTable, f1_class: int = 1) -> str:
    """Human-readable mean +- std tables, one per metric family."""
    methods = sorted({r.method for r in table.records},
                     key=lambda m: METHODS.index(m))
    agg = {(a["method"], a["budget"], a["metric"], a["k"], a.get("class_id")): a
           for a in table.aggregates}
    budgets = sorted({r.budget for r in table.records})
    ks = sorted({r.k for r in table.records if r.k > 0})

    def cell(method, budget, metric, k, class_id=None):
        a = agg.get((method, budget, metric, k, class_id))
        return f"{a['mean']:.4f} +- {a['std']:.4f}" if a else "-"

    lines = []
    specs = [
        ("Neighbor label purity", "purity", True, None),
        ("Similarity separation", "delta_sep", False, None),
        ("Retrieval hit rate", "hit", True, None),
        ("Retrieval MRR", "mrr", True, None),
        (f"kNN F1 (uniform voting, class {f1_class})", "f1_uniform", True, f1_class),
        (f"kNN F1 (distance voting, class {f1_class})", "f1_distance", True, f1_class),
    ]
    for title, metric, per_k, class_id in specs:
        lines.append(title)
        header = ["budget"] + (["k"] if per_k else []) + list(methods)
        lines.append("  " + "  ".join(f"{h:>20}" for h in header))
        for budget in budgets:
            for k in (ks if per_k else [0]):
                row = [str(budget)] + ([str(k)] if per_k else [])
                row += [cell(m, budget, metric, k, class_id) for m in methods]
                lines.append("  " + "  ".join(f"{v:>20}" for v in row))
        lines.append("")
    return "\n".join(lines)

"""Command line: synth, fit, transform, and evaluate workflows.

Exit codes: 0 success, 1 usage error, 2 data/runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import data as dm
from .harness import METHODS, ExperimentConfig, render_tables, run_experiment, write_jsonl
from .model import NonFiniteLossError, PearlConfig, train
from .preprocessing import standardizer_apply, standardizer_fit
from .prototypes import compute_prototypes
from .serialize import ModelCheckpoint, load_checkpoint, save_checkpoint

USAGE_EXIT = 1
DATA_EXIT = 2

_PEARL_INT_FLAGS = ("d_s", "d_r", "hidden", "batch_size", "max_epochs", "patience")
_PEARL_FLOAT_FLAGS = ("w_recon", "w_full", "w_align", "w_contrast",
                      "w_cls", "w_ortho", "tau", "lr")


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _add_io_flags(p, with_format=True):
    p.add_argument("--data", required=True, help="input dataset path")
    if with_format:
        p.add_argument("--format", choices=("binary", "csv"), default="binary")


def _add_pearl_flags(p):
    for name in _PEARL_INT_FLAGS:
        p.add_argument(f"--{name}", type=int, default=None)
    for name in _PEARL_FLOAT_FLAGS:
        p.add_argument(f"--{name}", type=float, default=None)


def _pearl_config(args, seed: int) -> PearlConfig:
    overrides = {"seed": seed}
    for name in _PEARL_INT_FLAGS + _PEARL_FLOAT_FLAGS:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    return PearlConfig(**overrides)


def _int_list(parser, text, flag):
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        parser.error(f"{flag} expects a comma-separated integer list, got {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="pearl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="sample a label budget and train a model")
    _add_io_flags(p)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-model", required=True)
    _add_pearl_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("transform", help="apply a trained model to a dataset")
    _add_io_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("evaluate", help="run the folds x budgets x methods protocol")
    _add_io_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--budgets", default="100,300,600,1200,2500,5000")
    p.add_argument("--k", "--k_values", dest="k", default="1,5,10,20")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--base-seed", "--base_seed", dest="base_seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report", required=True)
    p.add_argument("--quiet", action="store_true", help="skip the rendered tables")
    _add_pearl_flags(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def cmd_synth(args, parser):
    if args.classes < 2:
        parser.error("--classes must be >= 2")
    if args.dim < 2:
        parser.error("--dim must be >= 2")
    if args.per_class < 1:
        parser.error("--per-class must be >= 1")
    if min(args.separation, args.sigma, args.gamma) < 0:
        parser.error("--separation/--sigma/--gamma must be >= 0")
    cfg = dm.SyntheticConfig(
        C=args.classes, d=args.dim, n_per_class=args.per_class,
        separation=args.separation, noise_sigma=args.sigma,
        confounder_gamma=args.gamma, seed=args.seed,
    )
    ds = dm.generate_synthetic(cfg)
    dm.save_binary(ds, args.out)
    print(f"wrote {args.out}: n={ds.n} d={ds.d} C={ds.C}")
    return 0


def _trace_path(model_path: str) -> str:
    return model_path + ".trace.jsonl"


def _write_trace(trace, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace.epochs:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.write(json.dumps(
            {"best_epoch": trace.best_epoch, "stop_reason": trace.stop_reason},
            sort_keys=True,
        ) + "\n")


def cmd_fit(args, parser):
    if args.budget < 1:
        parser.error("--budget must be >= 1")
    ds = dm.load_embeddings(args.data, args.format)
    sample = dm.sample_label_budget(ds, np.arange(ds.n), args.budget, args.seed)
    x = ds.embeddings.values
    scaler = standardizer_fit(x[sample.train_indices])
    x_tr = standardizer_apply(scaler, x[sample.train_indices])
    x_va = standardizer_apply(scaler, x[sample.val_indices])
    y_tr = ds.labels[sample.train_indices]
    y_va = ds.labels[sample.val_indices]
    protos = compute_prototypes(x_tr, y_tr, ds.C)
    cfg = _pearl_config(args, seed=args.seed).resolved(ds.d)
    try:
        params, trace = train(cfg, x_tr, y_tr, x_va, y_va, protos)
    except NonFiniteLossError as err:
        if err.trace is not None:
            _write_trace(err.trace, _trace_path(args.out_model))
            print(f"training aborted; trace at {_trace_path(args.out_model)}",
                  file=sys.stderr)
        raise
    save_checkpoint(ModelCheckpoint(cfg=cfg, params=params, scaler=scaler),
                    args.out_model)
    _write_trace(trace, _trace_path(args.out_model))
    best_val = trace.epochs[trace.best_epoch]["val_total"]
    print(f"wrote {args.out_model}: d={ds.d} C={ds.C} budget={args.budget} "
          f"epochs={len(trace.epochs)} best_epoch={trace.best_epoch} "
          f"best_val={best_val:.6f} ({trace.stop_reason})")
    return 0


def cmd_transform(args, parser):
    from .model import transform as apply_model

    ds = dm.load_embeddings(args.data, args.format)
    ck = load_checkpoint(args.model)
    if ds.d != ck.params.d:
        raise ValueError(
            f"dimension mismatch: data d={ds.d}, model d={ck.params.d}"
        )
    refined = apply_model(ck.params, ck.cfg,
                          standardizer_apply(ck.scaler, ds.embeddings.values))
    out = dm.LabeledDataset(
        embeddings=dm.EmbeddingMatrix(refined), labels=ds.labels, C=ds.C,
        label_names=ds.label_names, meta=ds.meta,
    )
    dm.save_binary(out, args.out)
    print(f"wrote {args.out}: n={out.n} d={out.d}")
    return 0


def cmd_evaluate(args, parser):
    budgets = _int_list(parser, args.budgets, "--budgets")
    k_values = _int_list(parser, args.k, "--k")
    methods = tuple(m for m in args.methods.split(",") if m)
    for m in methods:
        if m not in METHODS:
            parser.error(f"unknown method {m!r} (choose from {', '.join(METHODS)})")
    if args.folds < 2:
        parser.error("--folds must be >= 2")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = ExperimentConfig(
            folds=args.folds, budgets=budgets, k_values=k_values,
            methods=methods, base_seed=args.base_seed,
            pearl=_pearl_config(args, seed=args.base_seed), jobs=args.jobs,
        )
    except ValueError as err:
        parser.error(str(err))
    ds = dm.load_embeddings(args.data, args.format)
    table = run_experiment(cfg, ds)
    write_jsonl(table, args.report)
    if not args.quiet:
        print(render_tables(table))
    print(f"wrote {args.report}: {len(table.records)} records, "
          f"{len(table.aggregates)} aggregates, {len(table.errors)} errors")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except SystemExit:
        raise
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())

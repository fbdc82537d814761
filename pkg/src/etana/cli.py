"""Command-line front end: train, classify, eval, sweep-cost, sweep-bins.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 capacity
error (grid or value table too large).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import Dataset, SplitPlan, load_dense, load_sparse
from .errors import CapacityError, ConfigError, DataError, ParseError
from .estimation import load_cost_file
from .evaluation import DEFAULT_BINS, DEFAULT_COSTS, bin_sweep, cost_sweep, run_eval, write_reports
from .fetana import DEFAULT_INIT_SCALE, SpsaSchedule
from .modelfile import load_model, save_model
from .runtime import TrainConfig, classify_batch, fit_model

logger = logging.getLogger("etana")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CAPACITY = 0, 2, 3, 4


def _add_data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--dataset", required=required, type=Path, help="training or instance file")
    g.add_argument("--format", choices=("dense", "sparse"), default="dense")
    g.add_argument("--label-col", default="-1",
                   help="label column index (negative counts from the right), header name, or 'none'")
    g.add_argument("--header", action="store_true", help="first line of dense files is a header")
    g.add_argument("--labels-file", type=Path, help="labels in a separate file, one per line")
    g.add_argument("--n-features", type=int, help="declared dimension of sparse files")
    g.add_argument("--limit", type=int, help="read at most this many instances")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--policy", choices=("etana", "fetana"), default="etana")
    g.add_argument("--cost", type=float, default=0.01, help="uniform per-feature cost")
    g.add_argument("--cost-file", type=Path, help="per-feature costs, one positive real per line")
    g.add_argument("--bins", type=int, help="quantisation bins per feature (default: number of classes)")
    g.add_argument("--grid", type=int, help="simplex grid resolution for ETANA")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    s = p.add_argument_group("SPSA (F-ETANA)")
    d = SpsaSchedule()
    s.add_argument("--t-max", type=int, default=d.t_max)
    s.add_argument("--grad-tol", type=float, default=d.grad_tol)
    s.add_argument("--patience", type=int, default=d.patience)
    s.add_argument("--gain", type=float, default=d.gain)
    s.add_argument("--gain-offset", type=float, default=d.offset)
    s.add_argument("--gain-decay", type=float, default=d.gain_decay)
    s.add_argument("--perturb", type=float, default=d.perturb)
    s.add_argument("--perturb-decay", type=float, default=d.perturb_decay)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--objective", choices=("bayes", "choice"), default="bayes",
                   help="terminal cost minimised during threshold training")
    s.add_argument("--init-scale", type=float, default=DEFAULT_INIT_SCALE)


def _add_split_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("split")
    g.add_argument("--validation", type=Path, help="held-out file (provided split); otherwise k-fold")
    g.add_argument("--validation-labels", type=Path, help="labels of the held-out file, one per line")
    g.add_argument("--folds", type=int, default=5)
    g.add_argument("--out", type=Path, help="directory for the JSON/text/CSV reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etana", description="Cost-aware sequential feature classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write it to a file")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--out", type=Path, required=True, help="model file to write")

    p = sub.add_parser("classify", help="classify instances with a trained model")
    p.add_argument("--model", type=Path, required=True)
    _add_data_args(p)
    p.add_argument("--trace", type=Path, help="write per-stage JSON traces, one line per instance")
    p.add_argument("--out", type=Path, help="write predictions here instead of stdout")

    for name, help_ in (("eval", "evaluate on a provided split or k folds"),
                        ("sweep-cost", "evaluate over a list of feature costs"),
                        ("sweep-bins", "evaluate over a list of bin counts")):
        p = sub.add_parser(name, help=help_)
        _add_data_args(p)
        _add_train_args(p)
        _add_split_args(p)
        if name != "eval":
            p.add_argument("--values", help="comma-separated sweep values")
    return parser


def _label_col(text: str):
    t = text.strip()
    if t.lower() == "none":
        return None
    try:
        return int(t)
    except ValueError:
        return t


def _load(args, path: Path, labels_path=None, classes=(), n_features=None, label_col="args") -> Dataset:
    if args.limit is not None and args.limit < 0:
        raise ConfigError("--limit must be non-negative")
    if args.format == "sparse":
        return load_sparse(path, n_features=n_features or args.n_features, classes=classes, limit=args.limit)
    col = _label_col(args.label_col) if label_col == "args" else label_col
    return load_dense(path, label_col=col, header=args.header, labels_path=labels_path,
                      classes=classes, limit=args.limit)


def _config(args) -> TrainConfig:
    schedule = SpsaSchedule(
        gain=args.gain, offset=args.gain_offset, gain_decay=args.gain_decay, perturb=args.perturb,
        perturb_decay=args.perturb_decay, t_max=args.t_max, grad_tol=args.grad_tol, patience=args.patience,
    )
    costs = load_cost_file(args.cost_file) if args.cost_file else None
    return TrainConfig(
        policy=args.policy, cost=args.cost, feature_costs=costs, n_bins=args.bins, grid=args.grid,
        schedule=schedule, seed=args.seed, threads=args.threads, batch_size=args.batch_size,
        objective=args.objective, init_scale=args.init_scale,
    )


def cmd_train(args) -> int:
    config = _config(args)
    ds = _load(args, args.dataset, args.labels_file)
    if ds.labels is None:
        raise ConfigError("training needs a label column")
    if ds.n_instances == 0:
        raise DataError(f"{args.dataset}: no instances")
    t0 = time.perf_counter()
    model = fit_model(ds.matrix, ds.labels, config, classes=ds.classes)
    elapsed = time.perf_counter() - t0
    save_model(model, args.out)
    print(f"trained {args.policy} on {ds.n_instances} instances, {ds.n_features} features, "
          f"{ds.n_classes} classes in {elapsed:.3f} s -> {args.out}")
    return EXIT_OK


def cmd_classify(args) -> int:
    model = load_model(args.model)
    if args.format == "sparse":
        ds = _load(args, args.dataset, n_features=model.n_features)
    else:
        try:
            ds = _load(args, args.dataset, label_col=None)
            labelled = ds.n_instances and ds.n_features != model.n_features
        except ParseError:
            labelled = True
        if labelled:
            # the file still carries its label column
            ds = _load(args, args.dataset, args.labels_file)
    X = ds.matrix if ds.n_instances else np.zeros((0, model.n_features))
    batch = classify_batch(X, model, trace=args.trace is not None)
    out = args.out.open("w", encoding="utf-8") if args.out else sys.stdout
    try:
        for r in batch.results:
            out.write(f"{model.symbol(r.label)}\t{r.features_used}\n")
    finally:
        if args.out:
            out.close()
    if args.trace is not None:
        with args.trace.open("w", encoding="utf-8") as fh:
            for r in batch.results:
                fh.write(json.dumps({"label": model.symbol(r.label), "features_used": r.features_used,
                                     "steps": [s.to_json() for s in r.trace]}) + "\n")
    return EXIT_OK


def _eval_inputs(args):
    config = _config(args)
    ds = _load(args, args.dataset, args.labels_file)
    if ds.labels is None:
        raise ConfigError("evaluation needs a label column")
    valid = None
    if args.validation is not None:
        valid = _load(args, args.validation, args.validation_labels, classes=ds.classes,
                      n_features=ds.n_features)
        plan = SplitPlan("provided", seed=args.seed)
    else:
        plan = SplitPlan("kfold", folds=args.folds, seed=args.seed)
    return config, ds, valid, plan


def _parse_values(text, default, cast):
    if text is None:
        return list(default)
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {text!r}") from None


def cmd_eval(args) -> int:
    config, ds, valid, plan = _eval_inputs(args)
    report = run_eval(ds, plan, config, valid)
    if args.out:
        write_reports(report, args.out, "eval")
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config, ds, valid, plan = _eval_inputs(args)
    if args.command == "sweep-cost":
        curve = cost_sweep(ds, plan, config, _parse_values(args.values, DEFAULT_COSTS, float), valid)
        stem = "sweep_cost"
    else:
        curve = bin_sweep(ds, plan, config, _parse_values(args.values, DEFAULT_BINS, int), valid)
        stem = "sweep_bins"
    if args.out:
        write_reports(curve, args.out, stem)
    print(curve.to_text(), end="")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "classify": cmd_classify, "eval": cmd_eval,
            "sweep-cost": cmd_sweep, "sweep-bins": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"etana: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"etana: capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (DataError, OSError) as exc:
        print(f"etana: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Evaluation protocol: per-fold fit and classify, cost sweeps, bin sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import Dataset, SplitPlan, make_folds
from .errors import ConfigError
from .runtime import TrainConfig, classify_batch, fit_model

logger = logging.getLogger(__name__)

DEFAULT_COSTS = (0.1, 0.08, 0.06, 0.04, 0.02, 0.01, 0.001, 0.0)
DEFAULT_BINS = (2, 3, 5, 10, 20, 30, 40, 50, 100)
CSV_HEADER = ("param", "accuracy", "mean_features", "train_time_s")


@dataclass
class FoldReport:
    fold: int
    n_train: int
    n_valid: int
    n_correct: int
    total_features: int
    train_time_s: float
    classify_time_s: float  # stop/continue loops only
    online_time_s: float  # quantisation of the validation rows plus the loops

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_valid

    @property
    def mean_features(self) -> float:
        return self.total_features / self.n_valid


@dataclass
class EvalReport:
    """Pooled validation metrics; timings are means over folds."""

    accuracy: float
    mean_features: float
    train_time_s: float
    classify_time_s: float
    online_time_s: float
    n_valid: int
    n_correct: int
    folds: list[FoldReport] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @classmethod
    def from_folds(cls, folds: list[FoldReport], config: dict) -> "EvalReport":
        n = sum(f.n_valid for f in folds)
        correct = sum(f.n_correct for f in folds)
        feats = sum(f.total_features for f in folds)
        return cls(
            accuracy=correct / n,
            mean_features=feats / n,
            train_time_s=float(np.mean([f.train_time_s for f in folds])),
            classify_time_s=float(np.mean([f.classify_time_s for f in folds])),
            online_time_s=float(np.mean([f.online_time_s for f in folds])),
            n_valid=n,
            n_correct=correct,
            folds=folds,
            config=config,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for f, src in zip(d["folds"], self.folds):
            f["accuracy"] = src.accuracy
            f["mean_features"] = src.mean_features
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        rows = [
            ("accuracy", f"{self.accuracy:.4f}  ({self.n_correct}/{self.n_valid})"),
            ("mean features", f"{self.mean_features:.2f}"),
            ("train time (s)", f"{self.train_time_s:.3f}"),
            ("classify time (s)", f"{self.classify_time_s:.3f}"),
            ("features+classify (s)", f"{self.online_time_s:.3f}"),
        ]
        w = max(len(k) for k, _ in rows)
        lines = [f"{k:<{w}}  {v}" for k, v in rows]
        if len(self.folds) > 1:
            lines.append("")
            lines.append(f"{'fold':>4}  {'n':>6}  {'accuracy':>8}  {'features':>8}  {'train_s':>8}")
            for f in self.folds:
                lines.append(f"{f.fold:>4}  {f.n_valid:>6}  {f.accuracy:>8.4f}  {f.mean_features:>8.2f}  "
                             f"{f.train_time_s:>8.3f}")
        return "\n".join(lines) + "\n"


def _evaluate_fold(i: int, train: Dataset, valid: Dataset, config: TrainConfig, n_classes: int) -> FoldReport:
    t0 = time.perf_counter()
    model = fit_model(train.matrix, train.labels, config, n_classes=n_classes, classes=train.classes)
    train_s = time.perf_counter() - t0
    batch = classify_batch(valid.matrix, model)
    correct = int((batch.labels == valid.labels).sum())
    logger.info("fold %d: accuracy %.4f, %.2f features, train %.2fs", i, correct / max(1, valid.n_instances),
                batch.mean_features, train_s)
    return FoldReport(i, train.n_instances, valid.n_instances, correct, int(batch.features_used.sum()),
                      train_s, batch.decide_s, batch.elapsed_s)


def run_eval(dataset: Dataset, plan: SplitPlan, config: TrainConfig,
             validation: Dataset | None = None) -> EvalReport:
    """Fit on each training portion, classify the held-out rows, pool the counts.

    With ``plan.kind == "provided"`` the ``validation`` dataset is the single
    held-out portion; otherwise ``dataset`` is split into k folds.
    """
    if dataset.labels is None:
        raise ConfigError("evaluation needs a labelled dataset")
    echo = dict(config.echo(), split={"kind": plan.kind, "folds": plan.folds, "seed": plan.seed})
    if plan.kind == "provided":
        if validation is None or validation.labels is None:
            raise ConfigError("a provided split needs a labelled validation dataset")
        if validation.n_features != dataset.n_features:
            raise ConfigError("training and validation data differ in feature count")
        n_classes = max(dataset.n_classes, validation.n_classes)
        classes = validation.classes if validation.n_classes > dataset.n_classes else dataset.classes
        train = Dataset(dataset.matrix, dataset.labels, list(classes), dataset.names)
        folds = [_evaluate_fold(0, train, validation, config, n_classes)]
    else:
        n_classes = dataset.n_classes
        folds = [
            _evaluate_fold(i, dataset.subset(tr), dataset.subset(va), config, n_classes)
            for i, (tr, va) in enumerate(make_folds(dataset.n_instances, plan))
        ]
    return EvalReport.from_folds(folds, echo)


@dataclass
class SweepCurve:
    param: str
    points: list[tuple[float, EvalReport]]

    def rows(self) -> list[tuple]:
        return [(p, r.accuracy, r.mean_features, r.train_time_s) for p, r in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p, acc, feats, t in self.rows():
            w.writerow([_fmt_param(p), repr(acc), repr(feats), repr(t)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"param": self.param,
                           "points": [{"value": p, "report": r.to_dict()} for p, r in self.points]}, indent=2)

    def to_text(self) -> str:
        lines = [f"{self.param:>8}  {'accuracy':>8}  {'features':>8}  {'train_s':>8}"]
        for p, acc, feats, t in self.rows():
            lines.append(f"{_fmt_param(p):>8}  {acc:>8.4f}  {feats:>8.2f}  {t:>8.3f}")
        return "\n".join(lines) + "\n"


def _fmt_param(p) -> str:
    return str(p) if isinstance(p, (int, np.integer)) else repr(float(p))


def cost_sweep(dataset: Dataset, plan: SplitPlan, config: TrainConfig, costs: Sequence[float] = DEFAULT_COSTS,
               validation: Dataset | None = None) -> SweepCurve:
    """One evaluation per uniform feature cost, with shared folds and seeds."""
    costs = [float(c) for c in costs]
    if any(not (np.isfinite(c) and c >= 0) for c in costs):
        raise ConfigError("sweep costs must be non-negative")
    points = [(c, run_eval(dataset, plan, replace(config, cost=c, feature_costs=None), validation)) for c in costs]
    return SweepCurve("c", points)


def bin_sweep(dataset: Dataset, plan: SplitPlan, config: TrainConfig, bins: Sequence[int] = DEFAULT_BINS,
              validation: Dataset | None = None) -> SweepCurve:
    """One evaluation per number of quantisation bins."""
    bins = [int(v) for v in bins]
    if any(v < 2 for v in bins):
        raise ConfigError("sweep bin counts must be >= 2")
    points = [(v, run_eval(dataset, plan, replace(config, n_bins=v), validation)) for v in bins]
    return SweepCurve("V", points)


def write_reports(obj, out: Path, stem: str) -> list[Path]:
    """Write ``stem.json`` and ``stem.txt`` (plus ``stem.csv`` for sweeps) under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.json", out / f"{stem}.txt"]
    paths[0].write_text(obj.to_json() + "\n", encoding="utf-8")
    paths[1].write_text(obj.to_text(), encoding="utf-8")
    if isinstance(obj, SweepCurve):
        p = out / f"{stem}.csv"
        p.write_text(obj.to_csv(), encoding="utf-8")
        paths.append(p)
    return paths

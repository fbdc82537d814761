"""Per-instance sequential classification and the training pipeline.

A ``TrainedModel`` bundles everything the online loop needs: priors, bin
edges, likelihoods, feature order, costs and one of the two stopping
policies.  ``fit_model`` builds one from labelled training rows.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch
from .estimation import (
    MISSING_BIN,
    FeatureOrder,
    LikelihoodTable,
    Quantizer,
    estimate_likelihoods,
    estimate_priors,
    fit_quantizer,
    order_features,
)
from .fetana import DEFAULT_INIT_SCALE, SpsaSchedule, ThresholdProblem, ThresholdSet, fetana_decide, train_thresholds
from .probability import CostModel, Decision, bayes_risk, update_posterior, zero_one_costs
from .solver import ValueTable, build_simplex_grid, default_resolution, etana_decide, solve_dp

logger = logging.getLogger(__name__)

POLICIES = ("etana", "fetana")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    priors: np.ndarray
    quantizer: Quantizer
    likelihoods: LikelihoodTable
    order: FeatureOrder
    costs: CostModel
    kind: str
    policy: ValueTable | ThresholdSet
    classes: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        K, V, N = self.likelihoods.table.shape
        if self.priors.shape != (N,) or self.costs.n_classes != N:
            raise ConfigError("class count differs between model parts")
        if self.quantizer.n_features != K or self.costs.n_features != K or len(self.order) != K:
            raise ConfigError("feature count differs between model parts")
        if self.quantizer.n_bins != V:
            raise ConfigError("bin count differs between quantizer and likelihoods")
        if self.kind == "etana":
            if not isinstance(self.policy, ValueTable) or self.policy.n_stages != K:
                raise ConfigError("ETANA model needs a value table with K+1 stages")
        elif not isinstance(self.policy, ThresholdSet) or self.policy.theta.shape != (N, K, N):
            raise ConfigError("F-ETANA model needs an N x K x N threshold set")
        if self.classes and len(self.classes) != N:
            raise ConfigError("label symbol count differs from the class count")

    @property
    def n_features(self) -> int:
        return self.likelihoods.n_features

    @property
    def n_classes(self) -> int:
        return self.likelihoods.n_classes

    @property
    def n_bins(self) -> int:
        return self.likelihoods.n_bins

    def decide(self, pi, k: int) -> Decision:
        if self.kind == "etana":
            return etana_decide(pi, k, self.policy, self.likelihoods, self.costs, self.order)
        return fetana_decide(pi, k, self.policy, self.costs)

    def symbol(self, label: int) -> str:
        return self.classes[label] if self.classes else str(label)


class TraceStep(NamedTuple):
    """One stage of a run: posterior and stop risk, then what happened.

    ``feature`` and ``bin`` are set on continue steps (``bin`` is -1 when the
    value was missing and the posterior was carried over unchanged).
    """

    stage: int
    posterior: np.ndarray
    risk: float
    decision: str
    feature: int | None = None
    bin: int | None = None

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "posterior": [float(p) for p in self.posterior],
            "risk": self.risk,
            "decision": self.decision,
            "feature": self.feature,
            "bin": self.bin,
        }


@dataclass(frozen=True)
class ClassificationResult:
    label: int
    features: tuple[int, ...]  # original indices of the evaluated features, in order
    trace: tuple[TraceStep, ...] = ()

    @property
    def features_used(self) -> int:
        return len(self.features)


def _run(bins_row, model: TrainedModel, record: bool) -> ClassificationResult:
    pi = model.priors
    lik = model.likelihoods.table
    perm = model.order.permutation
    K = model.n_features
    used = []
    trace = []
    for k in range(K + 1):
        d = model.decide(pi, k)
        if d.stop:
            if record:
                trace.append(TraceStep(k, pi.copy(), bayes_risk(pi, model.costs.misclass), "stop"))
            return ClassificationResult(d.label, tuple(used), tuple(trace))
        feat = int(perm[k])
        v = int(bins_row[feat])
        if record:
            trace.append(TraceStep(k, pi.copy(), bayes_risk(pi, model.costs.misclass), "continue", feat, v))
        if v != MISSING_BIN:
            pi = update_posterior(pi, lik[feat, v])
        used.append(feat)
    raise AssertionError("decide must stop once all features are used")  # pragma: no cover


def classify_instance(x, model: TrainedModel, trace: bool = True) -> ClassificationResult:
    """Run the sequential loop on one raw feature vector (NaN = missing)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.n_features:
        raise DimensionMismatch(f"instance has {x.shape[0]} features, model expects {model.n_features}")
    return _run(model.quantizer.transform(x), model, trace)


class BatchResult(NamedTuple):
    labels: np.ndarray
    features_used: np.ndarray
    elapsed_s: float  # quantisation plus the sequential loops
    results: list[ClassificationResult]
    quantize_s: float = 0.0

    @property
    def decide_s(self) -> float:
        return self.elapsed_s - self.quantize_s

    @property
    def mean_features(self) -> float:
        return float(self.features_used.mean()) if self.features_used.size else 0.0


def classify_batch(X, model: TrainedModel, trace: bool = False) -> BatchResult:
    """Classify each row independently; timing covers quantisation and the loops."""
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionMismatch(f"instances have shape {X.shape}, model expects {model.n_features} features")
    t0 = time.perf_counter()
    bins = model.quantizer.transform(X)
    t1 = time.perf_counter()
    results = [_run(bins[i], model, trace) for i in range(bins.shape[0])]
    t2 = time.perf_counter()
    labels = np.array([r.label for r in results], dtype=np.int64)
    used = np.array([r.features_used for r in results], dtype=np.int64)
    return BatchResult(labels, used, t2 - t0, results, t1 - t0)


def empirical_total_cost(results: Sequence[ClassificationResult], true_labels, cm: CostModel) -> float:
    """Mean of features paid plus the misclassification cost actually incurred."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if len(results) != true_labels.shape[0]:
        raise DimensionMismatch("results and labels differ in length")
    if not len(results):
        return 0.0
    total = 0.0
    for r, y in zip(results, true_labels):
        total += float(cm.feature_costs[list(r.features)].sum()) + float(cm.misclass[y, r.label])
    return total / len(results)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the training pipeline; ``None`` means the data-driven default."""

    policy: str = "etana"
    cost: float = 0.01
    feature_costs: np.ndarray | None = None
    misclass: np.ndarray | None = None
    n_bins: int | None = None  # defaults to the number of classes (at least 2)
    grid: int | None = None
    schedule: SpsaSchedule = field(default_factory=SpsaSchedule)
    seed: int = 0
    threads: int = 1
    batch_size: int | None = None
    objective: str = "bayes"
    init_scale: float = DEFAULT_INIT_SCALE

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if not (np.isfinite(self.cost) and self.cost >= 0):
            raise ConfigError(f"feature cost must be a non-negative number, got {self.cost}")
        if self.n_bins is not None and self.n_bins < 2:
            raise ConfigError(f"number of bins must be >= 2, got {self.n_bins}")
        if self.grid is not None and self.grid < 1:
            raise ConfigError(f"grid resolution must be >= 1, got {self.grid}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def bins_for(self, n_classes: int) -> int:
        return self.n_bins if self.n_bins is not None else max(2, n_classes)

    def cost_model(self, n_features: int, n_classes: int) -> CostModel:
        if self.feature_costs is not None:
            fc = np.asarray(self.feature_costs, dtype=float)
            if fc.shape != (n_features,):
                raise ConfigError(f"{fc.size} feature costs for {n_features} features")
        else:
            fc = np.full(n_features, float(self.cost))
        m = zero_one_costs(n_classes) if self.misclass is None else self.misclass
        return CostModel(fc, m)

    def echo(self) -> dict:
        return {
            "policy": self.policy,
            "cost": None if self.feature_costs is not None else self.cost,
            "n_bins": self.n_bins,
            "grid": self.grid,
            "seed": self.seed,
            "objective": self.objective,
            "init_scale": self.init_scale,
            "schedule": schedule_dict(self.schedule),
        }


def schedule_dict(s: SpsaSchedule) -> dict:
    return {
        "gain": s.gain, "offset": s.offset, "gain_decay": s.gain_decay,
        "perturb": s.perturb, "perturb_decay": s.perturb_decay,
        "t_max": s.t_max, "grad_tol": s.grad_tol, "patience": s.patience,
    }


def fit_model(X, y, config: TrainConfig, n_classes: int | None = None,
              classes: Sequence[str] = ()) -> TrainedModel:
    """Quantise, estimate, order and solve the chosen policy on training rows.

    ``n_classes`` keeps classes absent from this training portion in the
    model (they get uniform likelihood rows and zero prior).
    """
    y = np.asarray(y, dtype=np.int64)
    if n_classes is None:
        n_classes = len(classes) if classes else int(y.max()) + 1
    K = X.shape[1]
    V = config.bins_for(n_classes)
    cm = config.cost_model(K, n_classes)
    quantizer = fit_quantizer(X, V)
    binned = quantizer.transform(X)
    lik = estimate_likelihoods(binned, y, V, n_classes)
    priors = estimate_priors(y, n_classes)
    order = order_features(lik, priors, binned, y, cm.feature_costs)
    meta = {"train_instances": int(y.shape[0])}
    if config.policy == "etana":
        G = config.grid if config.grid is not None else default_resolution(n_classes)
        grid = build_simplex_grid(n_classes, G)
        policy = solve_dp(lik, cm, priors, order, grid)
        meta["grid_resolution"] = G
    else:
        problem = ThresholdProblem.from_model(binned, priors, lik, cm, order)
        policy, traces = train_thresholds(
            problem, config.schedule, seed=config.seed, batch_size=config.batch_size,
            threads=config.threads, objective=config.objective, init_scale=config.init_scale,
        )
        meta["schedule"] = schedule_dict(config.schedule)
        meta["seed"] = config.seed
        meta["objective"] = config.objective
        meta["init_scale"] = config.init_scale
        meta["iterations"] = [t.iterations for t in traces]
    return TrainedModel(priors, quantizer, lik, order, cm, config.policy, policy, list(classes), meta)

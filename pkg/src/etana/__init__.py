"""Cost-aware sequential classification with early stopping.

Features are evaluated one at a time in a fixed order; after each one the
class posterior is updated and a stopping policy decides whether paying for
the next feature is worth it.  Two policies are provided: an exact dynamic
program on a discretised simplex (ETANA) and per-choice linear thresholds
trained by simultaneous perturbation (F-ETANA).
"""

__version__ = "1.0.0"

from .datasets import Dataset, SplitPlan, load_dense, load_sparse, make_folds, write_dense
from .estimation import (
    FeatureOrder,
    LikelihoodTable,
    Quantizer,
    estimate_likelihoods,
    estimate_priors,
    fit_quantizer,
    order_features,
)
from .evaluation import EvalReport, bin_sweep, cost_sweep, run_eval
from .fetana import SpsaSchedule, ThresholdProblem, ThresholdSet, fetana_decide, train_thresholds
from .modelfile import load_model, save_model
from .probability import CostModel, Decision, bayes_decide, bayes_risk, batch_posterior, update_posterior
from .runtime import (
    ClassificationResult,
    TrainConfig,
    TrainedModel,
    classify_batch,
    classify_instance,
    empirical_total_cost,
    fit_model,
)
from .solver import SimplexGrid, ValueTable, build_simplex_grid, etana_decide, solve_dp

__all__ = [
    "ClassificationResult", "CostModel", "Dataset", "Decision", "EvalReport", "FeatureOrder",
    "LikelihoodTable", "Quantizer", "SimplexGrid", "SplitPlan", "SpsaSchedule", "ThresholdProblem",
    "ThresholdSet", "TrainConfig", "TrainedModel", "ValueTable", "batch_posterior", "bayes_decide",
    "bayes_risk", "bin_sweep", "build_simplex_grid", "classify_batch", "classify_instance", "cost_sweep",
    "empirical_total_cost", "estimate_likelihoods", "estimate_priors", "etana_decide", "fetana_decide",
    "fit_model", "fit_quantizer", "load_dense", "load_model", "load_sparse", "make_folds",
    "order_features", "run_eval", "save_model", "solve_dp", "train_thresholds", "update_posterior",
    "write_dense",
]

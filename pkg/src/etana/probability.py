"""Posterior recursion, Bayes-risk decision and predictive probabilities.

Conventions used throughout the package:

* classes and bins are 0-based indices;
* a posterior is a length-N float array on the unit simplex;
* ``misclass[i, j]`` is the cost of declaring class ``j`` when ``i`` is true,
  so the column ``misclass[:, j]`` is the risk vector of choice ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ZeroEvidence

# Below this the evidence is treated as impossible under the model.
EVIDENCE_FLOOR = 1e-300


@dataclass(frozen=True)
class CostModel:
    """Per-feature evaluation costs and the N x N misclassification matrix."""

    feature_costs: np.ndarray
    misclass: np.ndarray

    def __post_init__(self):
        fc = np.asarray(self.feature_costs, dtype=float).reshape(-1)
        m = np.asarray(self.misclass, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError(f"misclassification matrix must be square, got {m.shape}")
        if not np.all(np.isfinite(fc)) or np.any(fc < 0):
            raise ConfigError("feature costs must be finite and non-negative")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ConfigError("misclassification costs must be finite and non-negative")
        fc.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "feature_costs", fc)
        object.__setattr__(self, "misclass", m)

    @property
    def n_classes(self) -> int:
        return self.misclass.shape[0]

    @property
    def n_features(self) -> int:
        return self.feature_costs.shape[0]

    @classmethod
    def uniform(cls, n_features: int, n_classes: int, c: float = 0.01) -> "CostModel":
        """Equal feature costs ``c`` and 0-1 misclassification costs."""
        return cls(np.full(n_features, float(c)), zero_one_costs(n_classes))

    def permuted(self, order) -> "CostModel":
        return CostModel(self.feature_costs[np.asarray(order)], self.misclass)


def zero_one_costs(n_classes: int) -> np.ndarray:
    return 1.0 - np.eye(n_classes)


def check_posterior(pi, atol: float = 1e-9) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or pi.size < 1:
        raise ConfigError("posterior must be a non-empty vector")
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > atol:
        raise ConfigError(f"not a probability vector: {pi}")
    return pi


def update_posterior(prior, col) -> np.ndarray:
    """One Bayes step: ``diag(col) @ prior / (col @ prior)``.

    Raises ZeroEvidence when the observation is impossible under the prior.
    """
    prior = np.asarray(prior, dtype=float)
    col = np.asarray(col, dtype=float)
    if col.shape != prior.shape:
        raise ConfigError(f"likelihood column shape {col.shape} != posterior shape {prior.shape}")
    unnorm = col * prior
    z = unnorm.sum()
    if not z > EVIDENCE_FLOOR:
        raise ZeroEvidence("observation has zero probability under the current posterior")
    out = unnorm / z
    # second pass absorbs the rounding of the first division
    return out / out.sum()


def batch_posterior(prior, cols) -> np.ndarray:
    """Closed-form posterior ``p_i * prod_n P(F_n | T_i)``, normalised.

    Accumulated in log space so chains of thousands of factors do not
    underflow.
    """
    prior = np.asarray(prior, dtype=float)
    cols = np.asarray(cols, dtype=float)
    if cols.size == 0:
        return prior / prior.sum()
    cols = cols.reshape(-1, prior.shape[0])
    with np.errstate(divide="ignore"):
        logp = np.log(prior) + np.log(cols).sum(axis=0)
    top = logp.max()
    if not np.isfinite(top):
        raise ZeroEvidence("all classes have zero joint probability")
    w = np.exp(logp - top)
    return w / w.sum()


def class_risks(pi, misclass) -> np.ndarray:
    """Expected misclassification cost of each possible declaration.

    ``pi`` may be one posterior or a stack of them (last axis = classes).
    Terms are accumulated class by class in index order, so every risk is
    the same floating-point number however many posteriors are stacked.
    """
    pi = np.asarray(pi, dtype=float)
    m = np.asarray(misclass, dtype=float)
    out = pi[..., 0, None] * m[0]
    for i in range(1, m.shape[0]):
        out = out + pi[..., i, None] * m[i]
    return out


def bayes_risk(pi, misclass) -> float:
    """g(pi): the smallest expected misclassification cost."""
    return float(class_risks(pi, misclass).min())


def bayes_decide(pi, cm: CostModel) -> tuple[float, int]:
    """Return ``(risk, label)`` of the Bayes-optimal declaration.

    Ties go to the lowest class index (``argmin`` returns the first minimum).
    """
    risks = class_risks(pi, cm.misclass)
    label = int(np.argmin(risks))
    return float(risks[label]), label


def predictive_prob(pi, col) -> float:
    """Probability of observing the bin whose likelihood column is ``col``."""
    return float(np.dot(np.asarray(col, dtype=float), np.asarray(pi, dtype=float)))


class Decision(NamedTuple):
    """Outcome of a stop/continue query; ``label`` is set only when stopping."""

    stop: bool
    label: int | None = None

    @classmethod
    def stop_with(cls, label: int) -> "Decision":
        return cls(True, int(label))


CONTINUE = Decision(False, None)

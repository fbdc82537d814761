"""Turning a training matrix into the probabilistic model.

Quantile binning, Laplace-smoothed class-conditional bin likelihoods, class
priors, and the cost-scaled one-vs-rest error ordering of the features.
Missing feature values are NaN in the raw matrix and bin ``-1`` after
quantisation; they are left out of every count.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ConfigError, DataError, EmptyDataset

logger = logging.getLogger(__name__)

MISSING_BIN = -1
_ROW_CHUNK = 4096
# sparse matrices are densified this many columns at a time
_COL_CHUNK = 8192
# bound on the flat index array built while counting
_COUNT_CHUNK = 4_000_000


@dataclass(frozen=True)
class Quantizer:
    """Per-feature ascending bin edges.

    ``edges`` is a K x (V-1) array padded with ``+inf`` on the right once a
    feature runs out of distinct quantiles; a value goes to the number of
    edges strictly below it, so it lands in exactly one of the V bins and
    values beyond the training range clamp to the outer bins.
    """

    edges: np.ndarray
    n_bins: int

    @property
    def n_features(self) -> int:
        return self.edges.shape[0]

    def effective_bins(self) -> np.ndarray:
        return np.isfinite(self.edges).sum(axis=1) + 1

    def feature_edges(self, k: int) -> np.ndarray:
        e = self.edges[k]
        return e[np.isfinite(e)]

    @property
    def bin_dtype(self):
        if self.n_bins <= np.iinfo(np.int8).max:
            return np.int8
        return np.int16 if self.n_bins <= np.iinfo(np.int16).max else np.int32

    def _bins_of(self, block, edges) -> np.ndarray:
        bins = np.zeros(block.shape, dtype=self.bin_dtype)
        for e in range(edges.shape[1]):
            bins += block > edges[None, :, e]
        bins[np.isnan(block)] = MISSING_BIN
        return bins

    def transform(self, X) -> np.ndarray:
        if sparse.issparse(X):
            return self._transform_sparse(X)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return self.transform(X[None, :])[0]
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.empty(X.shape, dtype=self.bin_dtype)
        for start in range(0, X.shape[0], _ROW_CHUNK):
            out[start:start + _ROW_CHUNK] = self._bins_of(X[start:start + _ROW_CHUNK], self.edges)
        return out

    def _transform_sparse(self, X) -> np.ndarray:
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        X = sparse.csc_matrix(X)
        out = np.empty(X.shape, dtype=self.bin_dtype)
        for lo in range(0, X.shape[1], _COL_CHUNK):
            hi = min(lo + _COL_CHUNK, X.shape[1])
            block = X[:, lo:hi].toarray()
            out[:, lo:hi] = self._bins_of(block, self.edges[lo:hi])
        return out


def fit_quantizer(train_matrix, n_bins: int) -> Quantizer:
    """Equal-frequency edges from the training values of each feature.

    Repeated quantiles are collapsed and an edge equal to the feature maximum
    is dropped, so a constant feature gets no edges at all.
    """
    if n_bins < 2:
        raise ConfigError(f"number of bins must be >= 2, got {n_bins}")
    if sparse.issparse(train_matrix):
        X = sparse.csc_matrix(train_matrix)
    else:
        X = np.asarray(train_matrix, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise EmptyDataset("need at least one training row to fit bin edges")
    K = X.shape[1]
    qs = np.arange(1, n_bins) / n_bins
    quant = np.empty((K, n_bins - 1))
    top = np.empty(K)
    step = _COL_CHUNK if sparse.issparse(X) else max(K, 1)
    for lo in range(0, K, step):
        hi = min(lo + step, K)
        block = X[:, lo:hi].toarray() if sparse.issparse(X) else X[:, lo:hi]
        with warnings.catch_warnings():
            # all-NaN columns are allowed; they simply get no edges
            warnings.simplefilter("ignore", RuntimeWarning)
            quant[lo:hi] = np.nanquantile(block, qs, axis=0).T.reshape(hi - lo, n_bins - 1)
            top[lo:hi] = np.nanmax(block, axis=0)
    keep = quant < top[:, None]
    keep[:, 1:] &= quant[:, 1:] > quant[:, :-1]
    keep &= np.isfinite(quant)
    edges = np.full((K, n_bins - 1), np.inf)
    for k in np.flatnonzero(keep.any(axis=1)):
        e = quant[k, keep[k]]
        edges[k, : e.size] = e
    n_const = int((~keep.any(axis=1)).sum())
    if n_const:
        logger.info("%d of %d features are constant on the training data (single bin)", n_const, K)
    return Quantizer(edges=edges, n_bins=int(n_bins))


@dataclass(frozen=True)
class LikelihoodTable:
    """``table[k, v, i]`` = P(feature k falls in bin v | class i)."""

    table: np.ndarray

    @property
    def n_features(self) -> int:
        return self.table.shape[0]

    @property
    def n_bins(self) -> int:
        return self.table.shape[1]

    @property
    def n_classes(self) -> int:
        return self.table.shape[2]

    def column(self, k: int, v: int) -> np.ndarray:
        return self.table[k, v]


def bin_counts(binned, labels, n_bins: int, n_classes: int) -> np.ndarray:
    """K x V x N counts of (feature bin, class) pairs; missing bins skipped."""
    binned = np.asarray(binned)
    labels = np.asarray(labels, dtype=np.int64)
    S, K = binned.shape
    counts = np.zeros((K, n_bins, n_classes), dtype=np.int64)
    if S == 0:
        return counts
    step = max(1, _COUNT_CHUNK // S)
    for lo in range(0, K, step):
        hi = min(lo + step, K)
        b = binned[:, lo:hi].astype(np.int64)
        ok = b != MISSING_BIN
        if np.any((b[ok] < 0) | (b[ok] >= n_bins)):
            raise DataError("bin index out of range")
        feat = np.broadcast_to(np.arange(hi - lo), b.shape)
        cls = np.broadcast_to(labels[:, None], b.shape)
        flat = (feat[ok] * n_bins + b[ok]) * n_classes + cls[ok]
        counts[lo:hi].reshape(-1)[:] = np.bincount(flat, minlength=(hi - lo) * n_bins * n_classes)
    return counts


def estimate_likelihoods(binned, labels, n_bins: int, n_classes: int | None = None) -> LikelihoodTable:
    """Laplace-smoothed estimate ``(S_{k,v,i} + 1) / (S_i + V)``.

    A class with no observed samples gets the uniform row ``1/V``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError("class label out of range")
    counts = bin_counts(binned, labels, n_bins, n_classes)
    # per-feature class totals so rows stay normalised when values are missing
    totals = counts.sum(axis=1, keepdims=True)
    table = (counts + 1.0) / (totals + n_bins)
    return LikelihoodTable(table)


def estimate_priors(labels, n_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyDataset("cannot estimate class priors from zero samples")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    return counts / counts.sum()


@dataclass(frozen=True)
class FeatureOrder:
    permutation: np.ndarray
    scores: np.ndarray  # cost-scaled error sums, aligned with ``permutation``

    def __len__(self):
        return self.permutation.shape[0]


def one_vs_rest_errors(lik: LikelihoodTable, priors, binned, labels) -> np.ndarray:
    """Sum over classes of type I + type II error rates, per feature.

    For class i a single-feature MAP rule says "i" on bin v iff
    ``P(v|i) p_i >= sum_{j != i} P(v|j) p_j``; its false-positive and
    false-negative rates are counted on the training rows.
    """
    table = lik.table
    K, V, N = table.shape
    priors = np.asarray(priors, dtype=float)
    counts = bin_counts(binned, labels, V, N)  # K x V x N
    joint = table * priors[None, None, :]
    rest = joint.sum(axis=2, keepdims=True) - joint
    says_i = joint >= rest  # K x V x N
    total = counts.sum(axis=1)  # K x N observed per class
    neg_total = total.sum(axis=1, keepdims=True) - total
    rest_counts = counts.sum(axis=2, keepdims=True) - counts
    fp = (says_i * rest_counts).sum(axis=1)
    fn = (~says_i * counts).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        fpr = np.where(neg_total > 0, fp / neg_total, 0.0)
        fnr = np.where(total > 0, fn / total, 0.0)
    return (fpr + fnr).sum(axis=1)


def order_features(lik: LikelihoodTable, priors, binned, labels, costs) -> FeatureOrder:
    """Ascending cost-scaled one-vs-rest error, stable on ties."""
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (lik.n_features,):
        raise DataError(f"need {lik.n_features} feature costs, got {costs.shape}")
    err = one_vs_rest_errors(lik, priors, binned, labels)
    scores = costs * err
    # raw error breaks ties of the scaled score (all scores tie when c = 0)
    perm = np.lexsort((np.arange(err.size), err, scores))
    return FeatureOrder(permutation=perm.astype(np.int64), scores=scores[perm])


def load_cost_file(path, n_features: int | None = None) -> np.ndarray:
    """One positive real per line."""
    path = Path(path)
    values = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                v = float(s)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: not a number: {s!r}") from None
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{path}:{lineno}: feature cost must be positive, got {v}")
            values.append(v)
    costs = np.asarray(values, dtype=float)
    if n_features is not None and costs.size != n_features:
        raise ConfigError(f"{path}: {costs.size} costs for {n_features} features")
    return costs

"""ETANA policy: backward dynamic programming on a discretised simplex.

The value function of every stage is sampled on the lattice of compositions
``(n_1, ..., n_N) / G`` with ``sum n_i = G``.  Posteriors that fall between
lattice points are snapped to the L1-nearest point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from .errors import ConfigError, GridTooLarge
from .estimation import FeatureOrder, LikelihoodTable
from .probability import CONTINUE, CostModel, Decision, bayes_decide, class_risks

logger = logging.getLogger(__name__)

MAX_GRID_POINTS = 2_000_000
# (K+1) x d doubles; past this the value table cannot be held in memory
MAX_TABLE_ENTRIES = 400_000_000
_CHUNK_ENTRIES = 2_000_000
# fractional parts closer than this count as tied when snapping to the grid
_TIE_DECIMALS = 9
# stopping wins ties; this absorbs rounding in the two sides of the comparison
STOP_TOL = 1e-12


def grid_size(n_classes: int, resolution: int) -> int:
    return comb(resolution + n_classes - 1, n_classes - 1)


def default_resolution(n_classes: int, max_points: int = MAX_GRID_POINTS) -> int:
    """100 for two classes, 30 otherwise, reduced until the grid fits."""
    G = 100 if n_classes == 2 else 30
    while G > 1 and grid_size(n_classes, G) > max_points:
        G -= 1
    return G


@lru_cache(maxsize=64)
def _compositions(total: int, parts: int) -> np.ndarray:
    if parts == 1:
        return np.array([[total]], dtype=np.int32)
    blocks = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        head = np.full((rest.shape[0], 1), first, dtype=np.int32)
        blocks.append(np.hstack([head, rest]))
    return np.vstack(blocks)


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """All compositions of ``resolution`` into ``n_classes`` parts, lex order."""

    n_classes: int
    resolution: int
    counts: np.ndarray = field(repr=False)  # d x N integers
    _binom: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    def __len__(self):
        return self.size

    @property
    def points(self) -> np.ndarray:
        return self.counts / self.resolution

    def rank(self, counts) -> np.ndarray:
        """Lexicographic index of integer compositions (vectorised).

        Compositions sharing a prefix whose next entry is below ``n`` number
        ``C(R + q, q) - C(R - n + q, q)``, where ``R`` is what is left to
        distribute and ``q`` the parts after the current one.
        """
        counts = np.asarray(counts, dtype=np.int64)
        B = self._binom
        idx = np.zeros(counts.shape[:-1], dtype=np.int64)
        left = np.full(counts.shape[:-1], self.resolution, dtype=np.int64)
        N = self.n_classes
        for i in range(N - 1):
            q = N - 1 - i
            n = counts[..., i]
            idx += B[q, left] - B[q, left - n]
            left -= n
        return idx

    def snap_counts(self, P) -> np.ndarray:
        """Integer composition nearest in L1 to each row of ``P``.

        Largest-remainder rounding; among equally distant candidates the
        lexicographically smallest wins, which means handing the leftover
        units to the highest-indexed coordinates first.
        """
        P = np.asarray(P, dtype=float)
        scaled = P * self.resolution
        base = np.floor(scaled)
        frac = np.round(scaled - base, _TIE_DECIMALS)
        base = base.astype(np.int64)
        short = np.clip(self.resolution - base.sum(axis=-1), 0, self.n_classes)
        N = self.n_classes
        # descending remainder, higher index first on ties
        rev = frac[..., ::-1]
        order = np.argsort(-rev, axis=-1, kind="stable")
        pos = (N - 1) - order
        take = np.arange(N) < short[..., None]
        bump = np.zeros_like(base)
        np.put_along_axis(bump, pos, take.astype(np.int64), axis=-1)
        return base + bump

    def project(self, P) -> np.ndarray:
        return self.rank(self.snap_counts(P))


def build_simplex_grid(n_classes: int, resolution: int, max_points: int = MAX_GRID_POINTS) -> SimplexGrid:
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    if resolution < 1:
        raise ConfigError("grid resolution must be a positive integer")
    d = grid_size(n_classes, resolution)
    if d > max_points:
        raise GridTooLarge(
            f"simplex grid with N={n_classes}, G={resolution} has {d} points "
            f"(limit {max_points}); lower --grid or use the F-ETANA policy"
        )
    B = np.array(
        [[comb(x + q, q) for x in range(resolution + 1)] for q in range(n_classes)],
        dtype=np.int64,
    )
    counts = _compositions(resolution, n_classes)
    counts.setflags(write=False)
    return SimplexGrid(n_classes, resolution, counts, B)


def project_to_grid(pi, grid: SimplexGrid) -> int:
    return int(grid.project(np.asarray(pi, dtype=float)[None, :])[0])


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Stage value functions on the grid; row ``k`` is J_k, row K equals g."""

    values: np.ndarray  # (K+1) x d
    grid: SimplexGrid

    @property
    def n_stages(self) -> int:
        return self.values.shape[0] - 1

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.size:
            raise ConfigError("value table does not match its grid")


def _continuation(points, deltas, cost, next_layer, grid: SimplexGrid) -> np.ndarray:
    """``cost + sum_v (delta_v . p) * J_next(snap(update(p, delta_v)))``.

    ``deltas`` is V x N.  Bins with zero predictive probability drop out.
    """
    points = np.atleast_2d(points)
    V, N = deltas.shape
    out = np.empty(points.shape[0])
    step = max(1, _CHUNK_ENTRIES // max(1, V * N))
    for start in range(0, points.shape[0], step):
        p = points[start:start + step]
        joint = p[None, :, :] * deltas[:, None, :]  # V x m x N
        pred = joint.sum(axis=2)
        live = pred > 0
        safe = np.where(live, pred, 1.0)
        post = joint / safe[:, :, None]
        nxt = next_layer[grid.project(post)]
        out[start:start + step] = cost + np.where(live, pred * nxt, 0.0).sum(axis=0)
    return out


def _stage_inputs(k, lik: LikelihoodTable, cm: CostModel, order: FeatureOrder):
    feat = int(order.permutation[k])
    return lik.table[feat], float(cm.feature_costs[feat])


def cost_to_go(pi, k: int, vt: ValueTable, lik: LikelihoodTable, cm: CostModel, order: FeatureOrder) -> float:
    """Expected cost of evaluating the (k+1)-th ordered feature, then acting optimally."""
    K = vt.n_stages
    if not 0 <= k < K:
        raise ConfigError(f"continuation is defined for stages 0..{K - 1}, got {k}")
    deltas, cost = _stage_inputs(k, lik, cm, order)
    return float(_continuation(np.asarray(pi, dtype=float), deltas, cost, vt.values[k + 1], vt.grid)[0])


def solve_dp(lik: LikelihoodTable, cm: CostModel, priors=None, order: FeatureOrder | None = None,
             grid: SimplexGrid | None = None) -> ValueTable:
    """Backward induction from J_K = g down to J_0.

    ``priors`` do not enter the recursion (the table covers the whole
    simplex); the argument only validates dimensions.
    """
    K, _, N = lik.table.shape
    if order is None:
        order = FeatureOrder(np.arange(K), np.zeros(K))
    if grid is None:
        grid = build_simplex_grid(N, default_resolution(N))
    if grid.n_classes != N or cm.n_classes != N:
        raise ConfigError("class count differs between likelihoods, costs and grid")
    if priors is not None and np.asarray(priors).shape != (N,):
        raise ConfigError("prior length differs from the class count")
    if len(order) != K or cm.n_features != K:
        raise ConfigError("feature count differs between likelihoods, costs and order")
    if (K + 1) * grid.size > MAX_TABLE_ENTRIES:
        raise GridTooLarge(
            f"value table of {(K + 1) * grid.size} entries exceeds {MAX_TABLE_ENTRIES}; "
            "lower --grid or use the F-ETANA policy"
        )
    pts = grid.points
    g = class_risks(pts, cm.misclass).min(axis=1)
    values = np.empty((K + 1, grid.size))
    values[K] = g
    for k in range(K - 1, -1, -1):
        deltas, cost = _stage_inputs(k, lik, cm, order)
        values[k] = np.minimum(g, _continuation(pts, deltas, cost, values[k + 1], grid))
    logger.debug("solved %d stages on %d grid points", K, grid.size)
    values.setflags(write=False)
    return ValueTable(values, grid)


def etana_decide(pi, k: int, vt: ValueTable, lik: LikelihoodTable, cm: CostModel,
                 order: FeatureOrder) -> Decision:
    """Stop when the stopping risk is no greater than the cost-to-go."""
    risk, label = bayes_decide(pi, cm)
    if k >= vt.n_stages:
        return Decision.stop_with(label)
    if risk <= cost_to_go(pi, k, vt, lik, cm, order) + STOP_TOL:
        return Decision.stop_with(label)
    return CONTINUE

"""F-ETANA: linear stopping thresholds fitted by SPSA.

For each decision choice ``j`` a K x N stack of hyperplanes ``theta[j, k]``
drives a loop that continues while ``theta[j, k] @ pi_k >= 0``.  Its cost
is the features paid plus a terminal risk at the halting posterior.  At
inference the stack of the running Bayes-optimal choice is consulted and the
run stops once the score drops to zero or below.

Charging the risk of declaring the fixed choice ``j`` makes every feature
worthless in expectation (the posterior is a martingale, so the expected
risk of a fixed declaration does not depend on when the run stops).
Training therefore minimises the Bayes risk of the halting posterior by
default; the fixed-choice cost stays available for evaluation.
"""
from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceDetected, EmptyBatch
from .estimation import MISSING_BIN, FeatureOrder, LikelihoodTable
from .probability import CONTINUE, CostModel, Decision, bayes_decide, class_risks, update_posterior

logger = logging.getLogger(__name__)

FULL_BATCH_LIMIT = 5000
DEFAULT_BATCH = 512
_BLOCK_STAGES = 256
# default starting hyperplane scale relative to the all-ones direction
DEFAULT_INIT_SCALE = 0.01
PATH_CACHE_BYTES = 512 * 2**20


@dataclass(frozen=True)
class SpsaSchedule:
    """Gain ``a_t = gain * (t + 1 + offset)^-gain_decay`` and perturbation
    ``beta_t = perturb * (t + 1)^-perturb_decay``."""

    gain: float = 0.1
    offset: float = 10.0
    gain_decay: float = 0.602
    perturb: float = 0.05
    perturb_decay: float = 0.51
    t_max: int = 100_000
    grad_tol: float = 1e-5
    # consecutive sub-tolerance gradient estimates required before stopping
    patience: int = 100

    def __post_init__(self):
        if not (self.gain > 0 and self.offset > 0 and self.perturb > 0):
            raise ConfigError("SPSA gain, offset and perturbation scales must be positive")
        if not 0.5 < self.gain_decay <= 1:
            raise ConfigError(f"gain decay must lie in (0.5, 1], got {self.gain_decay}")
        if not 0.5 < self.perturb_decay <= 1:
            raise ConfigError(f"perturbation decay must lie in (0.5, 1], got {self.perturb_decay}")
        if self.t_max < 0 or self.patience < 1:
            raise ConfigError("t_max must be >= 0 and patience >= 1")
        if not self.grad_tol >= 0:
            raise ConfigError("gradient tolerance must be non-negative")

    def gain_at(self, t: int) -> float:
        return self.gain * (t + 1 + self.offset) ** -self.gain_decay

    def perturbation_at(self, t: int) -> float:
        return self.perturb * (t + 1) ** -self.perturb_decay


@dataclass(frozen=True, eq=False)
class ThresholdSet:
    """``theta[j, k]`` is the stage-k hyperplane used under decision choice j."""

    theta: np.ndarray  # N x K x N

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if th.ndim != 3 or th.shape[0] != th.shape[2]:
            raise ConfigError(f"thresholds must be N x K x N, got {th.shape}")
        if not np.all(np.isfinite(th)):
            raise DivergenceDetected("threshold set contains non-finite entries")
        object.__setattr__(self, "theta", th)

    @property
    def n_classes(self) -> int:
        return self.theta.shape[0]

    @property
    def n_stages(self) -> int:
        return self.theta.shape[1]

    @classmethod
    def constant(cls, n_classes: int, n_stages: int, value: float = 1.0) -> "ThresholdSet":
        return cls(np.full((n_classes, n_stages, n_classes), float(value)))


TERMINAL_COSTS = ("choice", "bayes")


def _check_terminal(terminal: str) -> None:
    if terminal not in TERMINAL_COSTS:
        raise ConfigError(f"terminal cost must be one of {TERMINAL_COSTS}, got {terminal!r}")


def fetana_decide(pi, k: int, ts: ThresholdSet, cm: CostModel) -> Decision:
    _, label = bayes_decide(pi, cm)
    if k >= ts.n_stages:
        return Decision.stop_with(label)
    if float(ts.theta[label, k] @ np.asarray(pi, dtype=float)) <= 0:
        return Decision.stop_with(label)
    return CONTINUE


@dataclass(eq=False)
class ThresholdProblem:
    """Training data for the thresholds, already binned and put in feature order.

    ``bins`` is S x K (stage order, ``-1`` for missing values); ``loglik`` is
    the K x V x N log-likelihood table in the same stage order.
    """

    priors: np.ndarray
    loglik: np.ndarray
    costs: np.ndarray
    misclass: np.ndarray
    bins: np.ndarray
    _cumcost: np.ndarray = field(init=False, repr=False)
    _full_paths: "PosteriorPaths | None" = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=float)
        self.loglik = np.asarray(self.loglik, dtype=float)
        self.costs = np.asarray(self.costs, dtype=float)
        self.misclass = np.asarray(self.misclass, dtype=float)
        self.bins = np.asarray(self.bins)
        K = self.loglik.shape[0]
        if self.bins.ndim != 2 or self.bins.shape[1] != K or self.costs.shape != (K,):
            raise ConfigError("training bins, likelihoods and costs disagree on the feature count")
        self._cumcost = np.concatenate([[0.0], np.cumsum(self.costs)])

    @classmethod
    def from_model(cls, binned, priors, lik: LikelihoodTable, cm: CostModel, order: FeatureOrder):
        perm = order.permutation
        with np.errstate(divide="ignore"):
            loglik = np.log(lik.table[perm])
        return cls(priors, loglik, cm.feature_costs[perm], cm.misclass, np.asarray(binned)[:, perm])

    @property
    def n_instances(self) -> int:
        return self.bins.shape[0]

    @property
    def n_stages(self) -> int:
        return self.loglik.shape[0]

    @property
    def n_classes(self) -> int:
        return self.priors.shape[0]

    def paths(self, rows=None) -> "PosteriorPaths":
        if rows is None:
            if self._full_paths is None:
                self._full_paths = PosteriorPaths(self, self.bins)
            return self._full_paths
        return PosteriorPaths(self, self.bins[np.asarray(rows)])

    def instance_costs(self, theta_j, j: int, paths: "PosteriorPaths", terminal: str = "choice") -> np.ndarray:
        """Cost of each path under the training loop of choice ``j``.

        ``terminal="choice"`` charges the risk of declaring ``j`` at the
        halting stage; ``"bayes"`` charges the Bayes risk of the halting
        posterior, i.e. the label a run would actually declare.
        """
        _check_terminal(terminal)
        theta_j = np.asarray(theta_j, dtype=float)
        K = self.n_stages
        S = paths.n_rows
        out = np.empty(S)
        active = np.arange(S)
        for start, block in paths.blocks():
            if active.size == 0:
                break
            P = block[active]  # a x B x N
            B = P.shape[1]
            stages = np.arange(start, start + B)
            cont = np.zeros((active.size, B), dtype=bool)
            live = stages < K
            cont[:, live] = np.einsum("abn,bn->ab", P[:, live], theta_j[stages[live]]) >= 0
            halted = ~cont
            done = halted.any(axis=1)
            first = np.argmax(halted, axis=1)
            rows = active[done]
            r = first[done]
            final = P[done, r]
            risks = class_risks(final, self.misclass)
            risk = risks[:, j] if terminal == "choice" else risks.min(axis=1)
            out[rows] = self._cumcost[start + r] + risk
            active = active[~done]
        return out

    def empirical_H(self, theta_j, j: int, rows=None, terminal: str = "choice") -> float:
        paths = self.paths(rows)
        if paths.n_rows == 0:
            raise EmptyBatch("cannot average the threshold cost over an empty batch")
        return float(self.instance_costs(theta_j, j, paths, terminal).mean())


class PosteriorPaths:
    """Posteriors of a fixed set of rows at every stage, built lazily in blocks.

    Paths do not depend on the thresholds, so one set serves every SPSA
    evaluation on the same rows.  Blocks are kept while they fit in
    ``cache_bytes``; later ones are rebuilt from their stored log-space
    starting point whenever a walk reaches them.
    """

    def __init__(self, problem: ThresholdProblem, bins, block_stages: int = _BLOCK_STAGES,
                 cache_bytes: int = PATH_CACHE_BYTES):
        self._p = problem
        self._bins = np.asarray(bins)
        self._B = block_stages
        self._budget = cache_bytes
        self._cache: dict[int, np.ndarray] = {}
        self._cached_bytes = 0
        self._lock = threading.Lock()
        logprior = np.log(np.where(problem.priors > 0, problem.priors, 1.0))
        logprior[problem.priors <= 0] = -np.inf
        # carries[b]: unnormalised log posterior just before block b
        self._carries = [np.broadcast_to(logprior, (self._bins.shape[0], problem.n_classes)).copy()]

    @property
    def n_rows(self) -> int:
        return self._bins.shape[0]

    @property
    def n_blocks(self) -> int:
        return (self._p.n_stages + self._B) // self._B

    def _build(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        K = self._p.n_stages
        lo = b * self._B
        hi = min(lo + self._B, K + 1)
        # block b holds posteriors at stages lo..hi-1; stage s has seen
        # features 0..s-1, so the increments needed are features lo-1..hi-2
        carry = self._carries[b]
        S, N = carry.shape
        feats = np.arange(max(lo - 1, 0), hi - 1)
        inc = np.zeros((S, hi - lo, N))
        if feats.size:
            fb = self._bins[:, feats]
            miss = fb == MISSING_BIN
            vals = self._p.loglik[feats[None, :], np.where(miss, 0, fb)]  # S x f x N
            vals[miss] = 0.0
            offset = 1 if lo == 0 else 0
            inc[:, offset:offset + feats.size] = vals
        logp = carry[:, None, :] + np.cumsum(inc, axis=1)
        top = logp.max(axis=2, keepdims=True)
        w = np.exp(logp - top)
        return w / w.sum(axis=2, keepdims=True), logp[:, -1, :].copy()

    def _block(self, b: int) -> np.ndarray:
        hit = self._cache.get(b)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._cache.get(b)
            if hit is not None:
                return hit
            while len(self._carries) <= b:
                # walk forward to learn the missing starting points
                _, nxt = self._build(len(self._carries) - 1)
                self._carries.append(nxt)
            block, nxt = self._build(b)
            if len(self._carries) == b + 1:
                self._carries.append(nxt)
            if self._cached_bytes + block.nbytes <= self._budget:
                self._cache[b] = block
                self._cached_bytes += block.nbytes
            return block

    def blocks(self):
        for b in range(self.n_blocks):
            yield b * self._B, self._block(b)

    def at_stage(self, k: int) -> np.ndarray:
        if not 0 <= k <= self._p.n_stages:
            raise IndexError(k)
        b = k // self._B
        return self._block(b)[:, k - b * self._B]


def evaluate_H(theta_j, instance_bins, j: int, priors, lik: LikelihoodTable, cm: CostModel,
               order: FeatureOrder, terminal: str = "choice") -> float:
    """Cost of one instance under the training loop of choice ``j``.

    Straight transcription of the loop: continue while the stage score is
    non-negative and features remain, paying each feature's cost, then add
    the risk of declaring ``j``.  ``instance_bins`` are in original feature
    indexing.
    """
    theta_j = np.asarray(theta_j, dtype=float)
    pi = np.asarray(priors, dtype=float)
    K = lik.n_features
    k = 0
    total = 0.0
    while k < K and theta_j[k] @ pi >= 0:
        feat = int(order.permutation[k])
        k += 1
        v = int(instance_bins[feat])
        if v != MISSING_BIN:
            pi = update_posterior(pi, lik.table[feat, v])
        total += float(cm.feature_costs[feat])
    risks = class_risks(pi, cm.misclass)
    return total + float(risks.min() if terminal == "bayes" else risks[j])


def spsa_gradient(objective, theta, t: int, schedule: SpsaSchedule, rng: np.random.Generator):
    """Two-sided simultaneous-perturbation gradient estimate.

    ``objective`` is called on ``theta + beta*alpha`` and ``theta - beta*alpha``
    with a Rademacher direction ``alpha``.  Returns ``(grad, f_plus, f_minus)``.
    """
    theta = np.asarray(theta, dtype=float)
    beta = schedule.perturbation_at(t)
    alpha = rng.choice(np.array([-1.0, 1.0]), size=theta.shape)
    f_plus = objective(theta + beta * alpha)
    f_minus = objective(theta - beta * alpha)
    return (f_plus - f_minus) / (2.0 * beta) * alpha, f_plus, f_minus


@dataclass
class ChoiceTrace:
    choice: int
    iterations: int
    grad_norm: float
    h_initial: float
    h_final: float
    converged: bool


def _train_choice(problem: ThresholdProblem, j: int, theta0, schedule: SpsaSchedule,
                  rng: np.random.Generator, batch_size: int | None,
                  objective: str) -> tuple[np.ndarray, ChoiceTrace]:
    S = problem.n_instances
    if S == 0:
        raise EmptyBatch("no training instances")
    if batch_size is None:
        batch_size = S if S <= FULL_BATCH_LIMIT else DEFAULT_BATCH
    batch_size = min(batch_size, S)
    full = batch_size == S
    monitor_rows = None if full else rng.choice(S, size=batch_size, replace=False)

    theta = np.array(theta0, dtype=float)
    h0 = problem.empirical_H(theta, j, monitor_rows, objective)
    quiet = 0
    grad_norm = math.nan
    t = 0
    while t < schedule.t_max:
        paths = problem.paths(None if full else rng.choice(S, size=batch_size, replace=False))

        def cost(th):
            return float(problem.instance_costs(th, j, paths, objective).mean())

        grad, _, _ = spsa_gradient(cost, theta, t, schedule, rng)
        grad_norm = float(np.linalg.norm(grad))
        t += 1
        if grad_norm <= schedule.grad_tol:
            quiet += 1
            if quiet >= schedule.patience:
                break
            continue
        quiet = 0
        theta = theta - schedule.gain_at(t - 1) * grad
        if not np.all(np.isfinite(theta)):
            raise DivergenceDetected(f"thresholds for choice {j} diverged at iteration {t}")
    h1 = problem.empirical_H(theta, j, monitor_rows, objective)
    if h1 > h0 + 1e-9:
        logger.warning("choice %d: cost rose from %.6g to %.6g during training", j, h0, h1)
    trace = ChoiceTrace(j, t, grad_norm, h0, h1, converged=quiet >= schedule.patience)
    return theta, trace


def train_thresholds(problem: ThresholdProblem, schedule: SpsaSchedule | None = None,
                     init: ThresholdSet | None = None, seed: int = 0,
                     batch_size: int | None = None, threads: int = 1,
                     objective: str = "bayes", init_scale: float = DEFAULT_INIT_SCALE):
    """Fit every decision choice's threshold stack independently.

    ``objective`` selects the terminal cost minimised by SPSA (see
    ``ThresholdProblem.instance_costs``).  Without ``init`` every hyperplane
    starts at ``init_scale * ones``: always continue, but close enough to the
    boundary for the first perturbations to flip some stopping decisions.

    Returns ``(ThresholdSet, [ChoiceTrace, ...])``.  Each choice draws its
    perturbations from its own child stream of ``seed``, so results do not
    depend on ``threads``.
    """
    schedule = schedule or SpsaSchedule()
    _check_terminal(objective)
    N, K = problem.n_classes, problem.n_stages
    if init is None:
        if not init_scale > 0:
            raise ConfigError("init_scale must be positive")
        init = ThresholdSet.constant(N, K, init_scale)
    if init.theta.shape != (N, K, N):
        raise ConfigError(f"initial thresholds must be {(N, K, N)}, got {init.theta.shape}")
    if problem.n_instances <= FULL_BATCH_LIMIT:
        problem.paths()  # build the shared full-set paths before any threads start
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(N)]

    def run(j):
        return _train_choice(problem, j, init.theta[j], schedule, rngs[j], batch_size, objective)

    if threads > 1 and N > 1:
        with ThreadPoolExecutor(max_workers=min(threads, N)) as pool:
            results = list(pool.map(run, range(N)))
    else:
        results = [run(j) for j in range(N)]
    theta = np.stack([r[0] for r in results])
    return ThresholdSet(theta), [r[1] for r in results]

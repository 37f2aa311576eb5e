"""Upper-bound estimators built on batch couplings.

Every estimator here produces a value that dominates the exact transport cost
of the full problem: it corresponds to a feasible (block-structured) coupling.
The estimators differ in how many of the k^2 batch-to-batch OT problems they
pay for:

    naive_average   k solves, diagonal matching only
    bhot            k^2 solves, optimal batch matching
    greedy_matching budgeted row-by-row matching with a diagonal-style
                    candidate allocation
    missing_costs   budgeted random mask (rows and columns always covered)
    missing_greedy  budgeted adaptive mask grown around expensive solved pairs
    proxy_bound     k solves, matching chosen by a cheap between-batch proxy

All methods report how many batch problems they actually solved (audited by
the process-wide counter in :mod:`otbounds.batch_matrix`), the batch matching
they settled on, and wall time.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .batch_matrix import BatchCostMatrix, BatchMatching, fill_entry, solve_meta
from .errors import (
    BudgetError,
    DegenerateCovariance,
    DimensionError,
    MissingSubPlan,
)
from .measures import (
    BatchPartition,
    EmpiricalMeasure,
    GroundCost,
    cost_matrix,
    normalized_batch_measure,
    require_equal_batch_mass,
)
from .solvers import EXACT_KERNEL, KernelConfig, TransportPlan

__all__ = [
    "Method",
    "Budget",
    "BoundReport",
    "naive_average",
    "bhot",
    "greedy_matching",
    "missing_costs",
    "missing_greedy",
    "proxy_bound",
    "assemble_full_plan",
    "solve_matched_plans",
    "bures_wasserstein_sq",
]

_MASS_EPS = 1e-9


class Method(Enum):
    NAIVE = "naive"
    BHOT = "bhot"
    GREEDY = "greedy"
    MISSING = "missing"
    MISSING_GREEDY = "missing_greedy"
    TREE = "tree"
    STAR = "star"
    PROXY_MEANS = "proxy_means"
    PROXY_AVG_DIST = "proxy_avg_dist"
    PROXY_BURES = "proxy_bures"

    @classmethod
    def from_name(cls, name: str) -> "Method":
        normalized = name.strip().lower().replace("-", "_")
        for member in cls:
            if member.value == normalized:
                return member
        raise ValueError(f"unknown method {name!r}")


@dataclass(frozen=True)
class Budget:
    """Number of batch OT solves a method may spend; valid range is [k, k^2]."""

    limit: int

    def __post_init__(self):
        if int(self.limit) != self.limit or self.limit < 1:
            raise BudgetError(f"budget must be a positive integer, got {self.limit!r}")
        object.__setattr__(self, "limit", int(self.limit))

    def validate(self, k: int) -> int:
        if self.limit < k:
            raise BudgetError(f"budget {self.limit} is below the minimum k={k}")
        if self.limit > k * k:
            raise BudgetError(f"budget {self.limit} exceeds k^2={k * k}")
        return self.limit


@dataclass(frozen=True)
class BoundReport:
    method: Method
    value: float
    budget_used: int
    matching: BatchMatching
    wall_time_ms: float

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value < -1e-9:
            raise ValueError(f"bound value must be finite and nonnegative, got {self.value}")
        object.__setattr__(self, "value", max(float(self.value), 0.0))

    def to_json_dict(self) -> dict:
        return {
            "method": self.method.value,
            "value": self.value,
            "budget_used": self.budget_used,
            "wall_time_ms": self.wall_time_ms,
            "matching": self.matching.to_json_list(),
        }


def _as_budget(budget) -> Budget:
    return budget if isinstance(budget, Budget) else Budget(int(budget))


def _prepare(X, Y, part_x: BatchPartition, part_y: BatchPartition):
    """Validate the equal-mass assumption and split both sides into batches."""
    require_equal_batch_mass(part_x, part_y)
    k = part_x.k
    xs = [normalized_batch_measure(X, part_x, s) for s in range(k)]
    ys = [normalized_batch_measure(Y, part_y, t) for t in range(k)]
    marginal = np.full(k, 1.0 / k)
    return k, xs, ys, marginal


def _fill_cells(D, cells, xs, ys, kernel, ground_cost, jobs=1):
    if jobs > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(
                pool.map(
                    lambda st: fill_entry(D, st[0], st[1], xs[st[0]], ys[st[1]], kernel, ground_cost),
                    cells,
                )
            )
    else:
        for s, t in cells:
            fill_entry(D, s, t, xs[s], ys[t], kernel, ground_cost)


def _permutation_matching(k: int, col_of_row) -> BatchMatching:
    W = np.zeros((k, k))
    pairs = []
    for s in range(k):
        t = int(col_of_row[s])
        W[s, t] = 1.0 / k
        pairs.append((s, t))
    return BatchMatching(tuple(pairs), W)


def _elapsed_ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def naive_average(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x: BatchPartition,
    part_y: BatchPartition,
    kernel: KernelConfig = EXACT_KERNEL,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
    jobs: int = 1,
) -> BoundReport:
    """Average of the k diagonal batch costs: batch s of X to batch s of Y."""
    t0 = time.perf_counter()
    k, xs, ys, _ = _prepare(X, Y, part_x, part_y)
    D = BatchCostMatrix(k)
    _fill_cells(D, [(s, s) for s in range(k)], xs, ys, kernel, ground_cost, jobs)
    value = float(D.values.diagonal().mean())
    matching = _permutation_matching(k, range(k))
    return BoundReport(Method.NAIVE, value, k, matching, _elapsed_ms(t0))


def bhot(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x: BatchPartition,
    part_y: BatchPartition,
    kernel: KernelConfig = EXACT_KERNEL,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
    jobs: int = 1,
) -> BoundReport:
    """Tightest batch bound: all k^2 batch costs, then the optimal coupling."""
    t0 = time.perf_counter()
    k, xs, ys, marginal = _prepare(X, Y, part_x, part_y)
    D = BatchCostMatrix(k)
    cells = [(s, t) for s in range(k) for t in range(k)]
    _fill_cells(D, cells, xs, ys, kernel, ground_cost, jobs)
    value, matching = solve_meta(D, marginal, marginal)
    return BoundReport(Method.BHOT, value, k * k, matching, _elapsed_ms(t0))


def _greedy_allocation(k: int, budget: int) -> list:
    """Candidate counts per processing step under the diagonal-style schedule.

    The count starts at 1 and gains 1 whenever the budget clears the next
    cumulative threshold C(k+1,2) - C(k-s,2). Earlier rows see more candidates,
    so the per-step counts are handed out in reverse: step p (0-based) gets
    counts[k-1-p]. Each count never exceeds the columns still unmatched.
    """
    counts = [1]
    for s in range(1, k):
        threshold = math.comb(k + 1, 2) - math.comb(k - s, 2)
        counts.append(counts[-1] + (1 if budget >= threshold else 0))
    return counts


def greedy_matching(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x: BatchPartition,
    part_y: BatchPartition,
    kernel: KernelConfig = EXACT_KERNEL,
    budget=None,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
    row_order_seed=None,
) -> BoundReport:
    """Match rows to columns one at a time, probing only a budgeted candidate set.

    Each row evaluates its allocated number of still-unmatched columns (lowest
    indices first), keeps the cheapest, and retires that column. Ties go to the
    lowest column index. Rows are processed in dataset order unless
    row_order_seed asks for a seeded shuffle.
    """
    t0 = time.perf_counter()
    k, xs, ys, _ = _prepare(X, Y, part_x, part_y)
    budget = _as_budget(budget if budget is not None else k * k).validate(k)
    counts = _greedy_allocation(k, budget)
    row_order = np.arange(k)
    if row_order_seed is not None:
        row_order = np.random.default_rng(row_order_seed).permutation(k)

    D = BatchCostMatrix(k)
    unmatched = list(range(k))
    matched_cost = {}
    col_of_row = {}
    for position, s in enumerate(row_order):
        n_candidates = min(counts[k - 1 - position], len(unmatched))
        candidates = unmatched[:n_candidates]
        for t in candidates:
            fill_entry(D, int(s), t, xs[s], ys[t], kernel, ground_cost)
        best = min(candidates, key=lambda t: (D.entry(int(s), t), t))
        col_of_row[int(s)] = best
        matched_cost[int(s)] = D.entry(int(s), best)
        unmatched.remove(best)

    value = sum(matched_cost.values()) / k
    matching = _permutation_matching(k, [col_of_row[s] for s in range(k)])
    used = D.solved_count
    assert used <= budget
    return BoundReport(Method.GREEDY, value, used, matching, _elapsed_ms(t0))


def missing_costs(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x: BatchPartition,
    part_y: BatchPartition,
    kernel: KernelConfig = EXACT_KERNEL,
    budget=None,
    seed: int = 0,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
    jobs: int = 1,
) -> BoundReport:
    """Solve a seeded random subset of B cells and couple over that mask.

    The first k cells form a random permutation, so every row and column is
    covered; the remaining B - k cells are drawn uniformly without replacement.
    """
    t0 = time.perf_counter()
    k, xs, ys, marginal = _prepare(X, Y, part_x, part_y)
    budget = _as_budget(budget if budget is not None else k).validate(k)
    rng = np.random.default_rng(seed)
    base = rng.permutation(k)
    chosen = {(s, int(base[s])) for s in range(k)}
    remaining = [(s, t) for s in range(k) for t in range(k) if (s, t) not in chosen]
    extra = budget - k
    if extra > 0:
        picks = rng.choice(len(remaining), size=extra, replace=False)
        chosen.update(remaining[i] for i in picks)

    D = BatchCostMatrix(k)
    _fill_cells(D, sorted(chosen), xs, ys, kernel, ground_cost, jobs)
    value, matching = solve_meta(D, marginal, marginal)
    return BoundReport(Method.MISSING, value, budget, matching, _elapsed_ms(t0))


def missing_greedy(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x: BatchPartition,
    part_y: BatchPartition,
    kernel: KernelConfig = EXACT_KERNEL,
    budget=None,
    seed: int = 0,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
) -> BoundReport:
    """Adaptive mask: grow the solved set around the most expensive solved pair.

    Starts from the diagonal. While budget remains, take the highest-cost
    solved cell whose row or column still has missing entries, solve one
    sampled missing cell in its row, and (budget permitting) one in its column.
    """
    t0 = time.perf_counter()
    k, xs, ys, marginal = _prepare(X, Y, part_x, part_y)
    budget = _as_budget(budget if budget is not None else k).validate(k)
    rng = np.random.default_rng(seed)

    D = BatchCostMatrix(k)
    for s in range(k):
        fill_entry(D, s, s, xs[s], ys[s], kernel, ground_cost)
    spent = k
    while spent < budget and not D.fully_solved:
        missing_in_row = ~D.solved.all(axis=1)
        missing_in_col = ~D.solved.all(axis=0)
        eligible = D.solved & (missing_in_row[:, None] | missing_in_col[None, :])
        ranked = np.where(eligible, D.values, -np.inf)
        s, t = np.unravel_index(int(np.argmax(ranked)), (k, k))
        if missing_in_row[s]:
            options = np.nonzero(~D.solved[s])[0]
            t_new = int(rng.choice(options))
            fill_entry(D, int(s), t_new, xs[s], ys[t_new], kernel, ground_cost)
            spent += 1
        if spent < budget and missing_in_col[t] and not D.solved[:, t].all():
            options = np.nonzero(~D.solved[:, t])[0]
            s_new = int(rng.choice(options))
            if not D.solved[s_new, t]:
                fill_entry(D, s_new, int(t), xs[s_new], ys[t], kernel, ground_cost)
                spent += 1

    value, matching = solve_meta(D, marginal, marginal)
    return BoundReport(Method.MISSING_GREEDY, value, spent, matching, _elapsed_ms(t0))


def _weighted_mean(measure: EmpiricalMeasure) -> np.ndarray:
    return measure.weights @ measure.points


def _weighted_cov(measure: EmpiricalMeasure) -> np.ndarray:
    centered = measure.points - _weighted_mean(measure)
    return (centered * measure.weights[:, None]).T @ centered


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(S)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def bures_wasserstein_sq(alpha: EmpiricalMeasure, beta: EmpiricalMeasure) -> float:
    """Squared Gaussian-approximation distance between two batches.

    Uses the empirical means and biased (1/n) covariances:
    |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2}).
    """
    if alpha.n_points < 2 or beta.n_points < 2:
        raise DegenerateCovariance("covariance needs at least 2 points per batch")
    mean_gap = _weighted_mean(alpha) - _weighted_mean(beta)
    Sa, Sb = _weighted_cov(alpha), _weighted_cov(beta)
    root_a = _psd_sqrt(Sa)
    cross = _psd_sqrt(root_a @ Sb @ root_a)
    value = float(mean_gap @ mean_gap + np.trace(Sa) + np.trace(Sb) - 2.0 * np.trace(cross))
    return max(value, 0.0)


_PROXY_NAMES = {
    "means": Method.PROXY_MEANS,
    "avg_dist": Method.PROXY_AVG_DIST,
    "bures": Method.PROXY_BURES,
}


def proxy_bound(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x: BatchPartition,
    part_y: BatchPartition,
    kernel: KernelConfig = EXACT_KERNEL,
    proxy: str = "means",
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
    jobs: int = 1,
) -> BoundReport:
    """Match batches by a cheap proxy metric, then solve only the k matched problems.

    proxy is one of "means" (distance between batch means), "avg_dist" (mean
    of the between-batch ground cost matrix), or "bures" (Gaussian
    approximation distance; needs >= 2 points per batch).
    """
    t0 = time.perf_counter()
    proxy = proxy.strip().lower().replace("-", "_")
    if proxy not in _PROXY_NAMES:
        raise ValueError(f"unknown proxy {proxy!r}; expected means, avg_dist, or bures")
    k, xs, ys, marginal = _prepare(X, Y, part_x, part_y)

    # proxy matrix is deliberately built outside fill_entry: these are not
    # OT solves and must not count against the budget
    proxy_matrix = BatchCostMatrix(k)
    for s in range(k):
        for t in range(k):
            if proxy == "means":
                gap = _weighted_mean(xs[s]) - _weighted_mean(ys[t])
                proxy_matrix.set_entry(s, t, float(np.linalg.norm(gap)))
            elif proxy == "avg_dist":
                proxy_matrix.set_entry(
                    s, t, float(cost_matrix(xs[s].points, ys[t].points, ground_cost).mean())
                )
            else:
                proxy_matrix.set_entry(s, t, math.sqrt(bures_wasserstein_sq(xs[s], ys[t])))
    _, matching = solve_meta(proxy_matrix, marginal, marginal)

    D = BatchCostMatrix(k)
    _fill_cells(D, matching.pairs, xs, ys, kernel, ground_cost, jobs)
    value = float(np.mean([D.entry(s, t) for s, t in matching.pairs]))
    return BoundReport(_PROXY_NAMES[proxy], value, k, matching, _elapsed_ms(t0))


def solve_matched_plans(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x: BatchPartition,
    part_y: BatchPartition,
    matching: BatchMatching,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
) -> dict:
    """Exact sub-plans for every batch pair the matching puts mass on."""
    from .solvers import solve_exact

    k, xs, ys, _ = _prepare(X, Y, part_x, part_y)
    plans = {}
    for s, t in matching.pairs:
        if matching.weights[s, t] <= _MASS_EPS:
            continue
        C = cost_matrix(xs[s].points, ys[t].points, ground_cost)
        plans[(s, t)] = solve_exact(C, xs[s].weights, ys[t].weights).plan
    return plans


def assemble_full_plan(
    matching: BatchMatching,
    sub_plans: dict,
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x: BatchPartition,
    part_y: BatchPartition,
) -> TransportPlan:
    """Stitch batch sub-plans into a coupling of the full measures.

    Block (s, t) of the output is the matching weight times the (s, t)
    sub-plan, scattered to the global sample indices. The result is feasible
    for the full problem, which is what makes every batch bound an upper bound.

    Raises:
        MissingSubPlan: the matching puts mass on a pair with no sub-plan.
    """
    full = np.zeros((X.n_points, Y.n_points))
    for s, t in matching.pairs:
        weight = float(matching.weights[s, t])
        if weight <= _MASS_EPS:
            continue
        if (s, t) not in sub_plans:
            raise MissingSubPlan(f"matching carries mass on ({s}, {t}) but no sub-plan was given")
        block = sub_plans[(s, t)]
        rows = part_x.batches[s]
        cols = part_y.batches[t]
        if block.entries.shape != (rows.size, cols.size):
            raise DimensionError(
                f"sub-plan ({s}, {t}) has shape {block.entries.shape}, "
                f"expected ({rows.size}, {cols.size})"
            )
        full[np.ix_(rows, cols)] += weight * block.entries
    return TransportPlan(full, X.weights, Y.weights)

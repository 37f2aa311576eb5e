"""Two-sample permutation test driven by a transport-bound statistic.

The null hypothesis is that both samples come from the same distribution.
Under the null the pooled sample is exchangeable, so re-splitting a shuffled
pool and recomputing the statistic draws from the null distribution. Batch
partitions are rebuilt on every resample: a contiguous split of a freshly
shuffled pool is a uniformly random split, which keeps the partition
randomness of the statistic inside the null distribution instead of
conditioning on one fixed batching.

The pool is put in a canonical row order before shuffling, so swapping the
two input samples changes nothing downstream of the seed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bounds import (
    Method,
    bhot,
    greedy_matching,
    missing_costs,
    missing_greedy,
    naive_average,
    proxy_bound,
)
from .errors import OtBoundsError, UnequalSamples
from .measures import EmpiricalMeasure, GroundCost, partition_contiguous
from .solvers import EXACT_KERNEL, KernelConfig
from .trees import bhot_star, bhot_tree

__all__ = [
    "PermutationTestResult",
    "compute_bound",
    "make_bound_statistic",
    "permutation_test",
]

# statistic(X, Y, seed) -> value; the seed feeds any internal randomness
BoundStatistic = Callable[[EmpiricalMeasure, EmpiricalMeasure, int], float]


@dataclass(frozen=True)
class PermutationTestResult:
    observed_statistic: float
    resample_statistics: np.ndarray
    p_value: float

    def __post_init__(self):
        stats = np.asarray(self.resample_statistics, dtype=np.float64)
        object.__setattr__(self, "resample_statistics", stats)
        n = stats.size
        if n < 1:
            raise ValueError("a permutation test needs at least one resample")
        expected = (1 + int(np.count_nonzero(stats >= self.observed_statistic))) / (1 + n)
        if abs(self.p_value - expected) > 1e-12:
            raise ValueError(
                f"p-value {self.p_value} does not match the add-one rank formula ({expected})"
            )

    @property
    def resamples(self) -> int:
        return int(self.resample_statistics.size)

    def to_json_dict(self) -> dict:
        return {
            "observed": float(self.observed_statistic),
            "p_value": float(self.p_value),
            "resamples": self.resamples,
        }


def compute_bound(
    method,
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x,
    part_y,
    budget=None,
    seed: int = 0,
    kernel: KernelConfig = EXACT_KERNEL,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
    rho: float = 0.5,
    embedding: str = "mean",
    jobs: int = 1,
):
    """Run one bound method by name and return its report."""
    method = Method.from_name(method) if isinstance(method, str) else method
    common = dict(kernel=kernel, ground_cost=ground_cost)
    if method is Method.NAIVE:
        return naive_average(X, Y, part_x, part_y, jobs=jobs, **common)
    if method is Method.BHOT:
        return bhot(X, Y, part_x, part_y, jobs=jobs, **common)
    if method is Method.GREEDY:
        return greedy_matching(X, Y, part_x, part_y, budget=budget, **common)
    if method is Method.MISSING:
        return missing_costs(X, Y, part_x, part_y, budget=budget, seed=seed, **common)
    if method is Method.MISSING_GREEDY:
        return missing_greedy(X, Y, part_x, part_y, budget=budget, seed=seed, **common)
    if method is Method.TREE:
        extra = 0 if budget is None else max(0, int(budget) - part_x.k)
        return bhot_tree(
            X, Y, part_x, part_y, extra_budget=extra, seed=seed, embedding=embedding,
            jobs=jobs, **common,
        )
    if method is Method.STAR:
        return bhot_star(
            X, Y, part_x, part_y, rho=rho, seed=seed, embedding=embedding,
            jobs=jobs, **common,
        )
    proxy = method.value.removeprefix("proxy_")
    return proxy_bound(X, Y, part_x, part_y, proxy=proxy, jobs=jobs, **common)


def make_bound_statistic(
    method,
    k: int,
    budget=None,
    kernel: KernelConfig = EXACT_KERNEL,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
    rho: float = 0.5,
    embedding: str = "mean",
    jobs: int = 1,
) -> BoundStatistic:
    """Wrap a bound method as a statistic; partitions are built per call."""
    method = Method.from_name(method) if isinstance(method, str) else method

    def statistic(X: EmpiricalMeasure, Y: EmpiricalMeasure, seed: int = 0) -> float:
        report = compute_bound(
            method, X, Y, partition_contiguous(X, k), partition_contiguous(Y, k),
            budget=budget, seed=seed, kernel=kernel, ground_cost=ground_cost,
            rho=rho, embedding=embedding, jobs=jobs,
        )
        return float(report.value)

    return statistic


def _resample_statistic(pool, n, statistic, seed_seq, index):
    rng = np.random.default_rng(seed_seq)
    order = rng.permutation(pool.shape[0])
    left = EmpiricalMeasure.uniform(pool[order[:n]])
    right = EmpiricalMeasure.uniform(pool[order[n:]])
    stat_seed = int(rng.integers(np.iinfo(np.int64).max))
    try:
        return float(statistic(left, right, stat_seed))
    except OtBoundsError as exc:
        raise type(exc)(f"statistic failed on resample {index}: {exc}") from exc


def permutation_test(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    statistic: BoundStatistic,
    resamples: int = 200,
    seed: int = 0,
    jobs: int = 1,
) -> PermutationTestResult:
    """One-sided (greater) permutation test of equal distributions.

    The p-value is the add-one rank estimator
    (1 + #{resample >= observed}) / (1 + resamples), so it never reaches 0.
    Weights are ignored: the pool is treated as an unweighted sample, which
    is the setting where exchangeability under the null holds.
    """
    if X.n_points != Y.n_points:
        raise UnequalSamples(
            f"pooled shuffles re-split evenly, so sample sizes must match; "
            f"got {X.n_points} and {Y.n_points}"
        )
    if resamples < 1:
        raise ValueError(f"resamples must be >= 1, got {resamples}")
    n = X.n_points
    pool = np.vstack([X.points, Y.points])
    pool = pool[np.lexsort(pool.T)]  # canonical order: invariant to swapping X and Y

    root = np.random.SeedSequence(seed)
    observed_seq, *resample_seqs = root.spawn(resamples + 1)
    observed = float(
        statistic(X, Y, int(np.random.default_rng(observed_seq).integers(np.iinfo(np.int64).max)))
    )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            stats = list(
                pool_exec.map(
                    lambda args: _resample_statistic(pool, n, statistic, *args),
                    [(seq, r) for r, seq in enumerate(resample_seqs)],
                )
            )
    else:
        stats = [
            _resample_statistic(pool, n, statistic, seq, r)
            for r, seq in enumerate(resample_seqs)
        ]

    stats = np.asarray(stats, dtype=np.float64)
    p_value = (1 + int(np.count_nonzero(stats >= observed))) / (1 + resamples)
    return PermutationTestResult(observed, stats, p_value)

"""Empirical measures, mini-batch partitions, and ground-cost matrices.

This module is the data layer for everything else: weighted point clouds
(:class:`EmpiricalMeasure`), disjoint batch partitions with their index maps and
aggregated masses (:class:`BatchPartition`), and pairwise ground costs
(:func:`cost_matrix` under a :class:`GroundCost` metric).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    AssumptionError,
    DimensionError,
    InvalidPartition,
    NonFiniteInput,
)

__all__ = [
    "EmpiricalMeasure",
    "BatchPartition",
    "GroundCost",
    "cost_matrix",
    "partition_contiguous",
    "partition_shuffled",
    "normalized_batch_measure",
    "require_equal_batch_mass",
]

logger = logging.getLogger(__name__)

_WEIGHT_SUM_TOL = 1e-12
_EQUAL_MASS_TOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EmpiricalMeasure:
    """A discrete probability measure: N support points in R^d with positive weights.

    Args:
        points: array of shape (N, d), sample coordinates.
        weights: array of shape (N,), strictly positive, summing to 1.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2:
            raise DimensionError(f"points must be 2-D (N, d), got shape {points.shape}")
        n, d = points.shape
        if n < 1 or d < 1:
            raise DimensionError(f"need N >= 1 and d >= 1, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise NonFiniteInput("points contain non-finite coordinates")
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (n,):
            raise DimensionError(
                f"weights shape {weights.shape} does not match {n} points"
            )
        if not np.all(np.isfinite(weights)):
            raise NonFiniteInput("weights contain non-finite values")
        if np.any(weights <= 0):
            raise ValueError("all weights must be strictly positive")
        total = float(weights.sum())
        if abs(total - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1 within {_WEIGHT_SUM_TOL}, got {total!r}")
        object.__setattr__(self, "points", _freeze(points))
        object.__setattr__(self, "weights", _freeze(weights))

    @classmethod
    def uniform(cls, points: np.ndarray) -> "EmpiricalMeasure":
        """Uniform measure on the given points."""
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


class GroundCost(enum.Enum):
    """Ground metric used for pairwise transport costs."""

    EUCLIDEAN = "euclidean"
    SQUARED_EUCLIDEAN = "sqeuclidean"
    L1 = "l1"

    @classmethod
    def from_name(cls, name: str) -> "GroundCost":
        for member in cls:
            if member.value == name.lower():
                return member
        raise ValueError(f"unknown ground cost {name!r}; expected one of "
                         f"{[m.value for m in cls]}")


def cost_matrix(xs: np.ndarray, ys: np.ndarray, cost: GroundCost = GroundCost.EUCLIDEAN) -> np.ndarray:
    """Pairwise ground-cost matrix between two point arrays.

    Args:
        xs: array (n, d).
        ys: array (m, d); d must match xs.
        cost: ground metric.

    Returns:
        (n, m) array with entry (i, j) = c(x_i, y_j), finite and nonnegative.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.shape[1] != ys.shape[1]:
        raise DimensionError(
            f"point dimensions disagree: {xs.shape[1]} vs {ys.shape[1]}"
        )
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise NonFiniteInput("cost_matrix inputs contain non-finite coordinates")
    metric = {"euclidean": "euclidean", "sqeuclidean": "sqeuclidean", "l1": "cityblock"}[cost.value]
    return cdist(xs, ys, metric=metric)


@dataclass(frozen=True)
class BatchPartition:
    """k disjoint index batches over a measure's support, with index maps and masses.

    Fields:
        batches: tuple of k integer index arrays, pairwise disjoint.
        aggregated_mass: length-k vector; entry s is the (renormalized) total
            weight carried by batch s. Sums to 1.
        n_total: size of the underlying measure the indices refer to.
    """

    batches: tuple
    aggregated_mass: np.ndarray
    n_total: int

    def __post_init__(self):
        batches = tuple(np.asarray(b, dtype=np.intp) for b in self.batches)
        if len(batches) == 0:
            raise InvalidPartition("a partition needs at least one batch")
        flat = np.concatenate(batches)
        if flat.size != np.unique(flat).size:
            raise InvalidPartition("batches overlap")
        if flat.min() < 0 or flat.max() >= self.n_total:
            raise InvalidPartition("batch indices out of range")
        mass = np.asarray(self.aggregated_mass, dtype=np.float64)
        if mass.shape != (len(batches),):
            raise DimensionError("aggregated_mass length must equal the batch count")
        if abs(float(mass.sum()) - 1.0) > 1e-9:
            raise InvalidPartition(f"aggregated masses sum to {mass.sum()!r}, expected 1")
        object.__setattr__(self, "batches", batches)
        object.__setattr__(self, "aggregated_mass", _freeze(mass))

    @property
    def k(self) -> int:
        return len(self.batches)

    @property
    def batch_size(self) -> int:
        """Common batch size when all batches are equally sized."""
        sizes = {len(b) for b in self.batches}
        if len(sizes) != 1:
            raise InvalidPartition("batches are not equally sized")
        return sizes.pop()

    def sigma(self, s: int, i: int) -> int:
        """Global index of local sample i within batch s."""
        if not 0 <= s < self.k:
            raise IndexError(f"batch index {s} out of range for k={self.k}")
        batch = self.batches[s]
        if not 0 <= i < len(batch):
            raise IndexError(f"local index {i} out of range for batch of size {len(batch)}")
        return int(batch[i])

    def covered_indices(self) -> np.ndarray:
        """Sorted union of all batch indices."""
        return np.sort(np.concatenate(self.batches))

    def has_equal_mass(self, tol: float = _EQUAL_MASS_TOL) -> bool:
        """True when every batch carries mass 1/k within tol."""
        return bool(np.max(np.abs(self.aggregated_mass - 1.0 / self.k)) <= tol)


def _split_order(measure: EmpiricalMeasure, order: np.ndarray, k: int, strict: bool) -> BatchPartition:
    n_points = measure.n_points
    if k < 1:
        raise InvalidPartition(f"k must be >= 1, got {k}")
    if k > n_points:
        raise InvalidPartition(f"k={k} exceeds the number of samples N={n_points}")
    remainder = n_points % k
    if remainder and strict:
        raise InvalidPartition(
            f"k={k} does not divide N={n_points}; use strict=False to drop the "
            f"{remainder} trailing samples"
        )
    if remainder:
        logger.warning(
            "dropping %d trailing samples so k=%d divides the remaining %d",
            remainder, k, n_points - remainder,
        )
        order = order[: n_points - remainder]
    n = len(order) // k
    batches = tuple(order[s * n : (s + 1) * n] for s in range(k))
    raw = np.array([measure.weights[b].sum() for b in batches])
    return BatchPartition(batches, raw / raw.sum(), n_points)


def partition_contiguous(measure: EmpiricalMeasure, k: int, strict: bool = True) -> BatchPartition:
    """Split sample indices into k contiguous equally sized batches.

    Batch s holds global indices {n(s-1), ..., ns-1} with n = N/k. In strict
    mode (default) k must divide N; otherwise the trailing N mod k samples are
    dropped and masses renormalized, with a warning.
    """
    return _split_order(measure, np.arange(measure.n_points, dtype=np.intp), k, strict)


def partition_shuffled(measure: EmpiricalMeasure, k: int, seed: int, strict: bool = True) -> BatchPartition:
    """Contiguous split of a seeded uniformly random permutation of the indices.

    Deterministic for a fixed seed.
    """
    order = np.random.default_rng(seed).permutation(measure.n_points).astype(np.intp)
    return _split_order(measure, order, k, strict)


def normalized_batch_measure(measure: EmpiricalMeasure, partition: BatchPartition, s: int) -> EmpiricalMeasure:
    """Batch s of a measure, renormalized to a probability measure.

    Weight i of the result is w_{sigma(i,s)} / (sum of batch-s weights).
    """
    if not 0 <= s < partition.k:
        raise IndexError(f"batch index {s} out of range for k={partition.k}")
    idx = partition.batches[s]
    w = measure.weights[idx]
    return EmpiricalMeasure(measure.points[idx], w / w.sum())


def require_equal_batch_mass(*partitions: BatchPartition) -> None:
    """Raise AssumptionError unless every partition has uniform batch mass 1/k.

    Bound constructors call this because the batch-coupling guarantees only
    hold under the equal-mass assumption; it is validated, never silently
    imposed.
    """
    ks = {p.k for p in partitions}
    if len(ks) != 1:
        raise AssumptionError(f"partitions disagree on batch count: {sorted(ks)}")
    for p in partitions:
        if not p.has_equal_mass():
            raise AssumptionError(
                "batch masses deviate from 1/k by more than 1e-9; "
                "the bound constructions require equal batch mass"
            )

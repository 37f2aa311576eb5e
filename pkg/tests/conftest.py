"""Shared fixtures and instance factories for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from otbounds.measures import EmpiricalMeasure, partition_contiguous


def random_instance(seed: int, n_points: int = 12, dim: int = 2, k: int = 2, spread: float = 1.0):
    """A seeded pair of uniform measures with contiguous partitions.

    Returns (X, Y, part_x, part_y). Points are standard normal draws; Y is
    shifted by `spread` so the transport cost is bounded away from zero.
    """
    rng = np.random.default_rng(seed)
    X = EmpiricalMeasure.uniform(rng.normal(size=(n_points, dim)))
    Y = EmpiricalMeasure.uniform(rng.normal(size=(n_points, dim)) + spread)
    return X, Y, partition_contiguous(X, k), partition_contiguous(Y, k)


def brute_force_uniform_ot(C: np.ndarray) -> float:
    """Minimum of (1/n) sum_i C[i, pi(i)] over all n! permutations."""
    from itertools import permutations

    n = C.shape[0]
    assert C.shape == (n, n) and n <= 8
    best = np.inf
    rows = np.arange(n)
    for perm in permutations(range(n)):
        best = min(best, C[rows, list(perm)].sum() / n)
    return float(best)


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)

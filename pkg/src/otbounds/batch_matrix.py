"""The k x k batch-to-batch cost matrix with a solved mask, and the meta problem.

Batches play the role of samples in a second, smaller OT problem: entry (s, t)
of the :class:`BatchCostMatrix` is the transport cost between normalized batch
s of the source and batch t of the target. Partially filled matrices model
budget-constrained methods; :func:`solve_meta` couples the batches optimally
over the solved entries only. :func:`dual_shift_matrix` derives, from a full
table of exact batch duals, how far each pair of diagonal dual templates can
be shifted while preserving feasibility (the ingredient of the lower bound).

Every call to :func:`fill_entry` increments a process-wide counter so tests
and reports can audit exactly how many batch OT problems were solved.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    DoubleSolveError,
    DualKindError,
    InfeasibleMask,
    MissingDuals,
)
from .measures import EmpiricalMeasure, GroundCost, cost_matrix
from .solvers import DualPotentials, KernelConfig, kernel_cost, solve_exact

__all__ = [
    "BatchCostMatrix",
    "BatchMatching",
    "fill_entry",
    "solve_meta",
    "dual_shift_matrix",
    "solve_counter",
]

# sentinel magnitude factor for unsolved entries handed to the exact solver
_SENTINEL_FACTOR = 1e6
_MASS_EPS = 1e-9


class _SolveCounter:
    """Thread-safe process-wide count of batch OT solves (fill_entry calls)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def increment(self) -> None:
        with self._lock:
            self._count += 1

    def reset(self) -> int:
        with self._lock:
            previous, self._count = self._count, 0
            return previous

    @property
    def value(self) -> int:
        with self._lock:
            return self._count


solve_counter = _SolveCounter()


class BatchCostMatrix:
    """k x k batch cost values plus a boolean solved mask.

    Unsolved entries hold no numeric value (NaN internally); the large-scalar
    sentinel only materializes when the matrix is handed to the exact solver.
    Concurrent fills of distinct cells are safe; filling the same cell twice
    raises :class:`DoubleSolveError` to keep budget accounting honest.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        self.values = np.full((k, k), np.nan)
        self.solved = np.zeros((k, k), dtype=bool)
        self._lock = threading.Lock()

    @property
    def solved_count(self) -> int:
        return int(self.solved.sum())

    @property
    def fully_solved(self) -> bool:
        return bool(self.solved.all())

    def entry(self, s: int, t: int) -> float:
        if not self.solved[s, t]:
            raise KeyError(f"entry ({s}, {t}) is not solved")
        return float(self.values[s, t])

    def set_entry(self, s: int, t: int, value: float) -> None:
        """Record a solved value; rejects re-solves and negative costs."""
        if not (0 <= s < self.k and 0 <= t < self.k):
            raise IndexError(f"cell ({s}, {t}) out of range for k={self.k}")
        if not np.isfinite(value):
            raise ValueError(f"cell ({s}, {t}) value is not finite: {value}")
        if value < -1e-9:
            raise ValueError(f"cell ({s}, {t}) value is negative: {value}")
        with self._lock:
            if self.solved[s, t]:
                raise DoubleSolveError(f"cell ({s}, {t}) was already solved")
            self.values[s, t] = max(float(value), 0.0)
            self.solved[s, t] = True

    def masked_with_sentinel(self) -> np.ndarray:
        """Copy of values with unsolved cells set to a dominating finite scalar."""
        if not self.solved.any():
            raise InfeasibleMask("no solved entries at all")
        sentinel = _SENTINEL_FACTOR * (float(self.values[self.solved].max()) + 1.0)
        out = self.values.copy()
        out[~self.solved] = sentinel
        return out

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "values": [
                [float(self.values[s, t]) if self.solved[s, t] else None for t in range(self.k)]
                for s in range(self.k)
            ],
            "solved": self.solved.astype(bool).tolist(),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "BatchCostMatrix":
        matrix = cls(int(payload["k"]))
        for s, row in enumerate(payload["values"]):
            for t, value in enumerate(row):
                if payload["solved"][s][t]:
                    matrix.set_entry(s, t, float(value))
        return matrix


@dataclass(frozen=True)
class BatchMatching:
    """A coupling of source batches to target batches.

    pairs lists the support; weights is the full k x k coupling matrix W.
    Under equal batch masses the optimal W is a permutation scaled by 1/k.
    """

    pairs: tuple
    weights: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DimensionError(f"matching weights must be square, got {W.shape}")
        if W.min(initial=0.0) < -1e-12:
            raise ValueError("matching weights must be nonnegative")
        pairs = tuple((int(s), int(t)) for s, t in self.pairs)
        support = {(s, t) for s, t in zip(*np.nonzero(W > _MASS_EPS))}
        if not support.issubset(set(pairs)):
            raise ValueError("pairs must cover every cell carrying mass")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "weights", np.maximum(W, 0.0))
        self.weights.setflags(write=False)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    def check_marginals(self, a_tilde: np.ndarray, b_tilde: np.ndarray, tol: float = 1e-9) -> None:
        row_err = np.abs(self.weights.sum(axis=1) - a_tilde).max()
        col_err = np.abs(self.weights.sum(axis=0) - b_tilde).max()
        if max(row_err, col_err) > tol:
            raise ValueError(f"matching marginals off by {max(row_err, col_err):.3e}")

    def is_permutation(self, tol: float = 1e-9) -> bool:
        """True when W has exactly k nonzeros, one per row/column, each 1/k."""
        W = self.weights
        nz = W > _MASS_EPS
        return bool(
            nz.sum() == self.k
            and (nz.sum(axis=0) == 1).all()
            and (nz.sum(axis=1) == 1).all()
            and np.abs(W[nz] - 1.0 / self.k).max() <= tol
        )

    def to_json_list(self) -> list:
        return [[s, t, float(self.weights[s, t])] for s, t in self.pairs]


def fill_entry(
    D: BatchCostMatrix,
    s: int,
    t: int,
    xs: EmpiricalMeasure,
    ys: EmpiricalMeasure,
    kernel: KernelConfig,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
) -> BatchCostMatrix:
    """Solve the (s, t) batch OT problem and record its value in D.

    xs and ys are the normalized batch measures. The process-wide solve
    counter is incremented exactly once per successful call.

    Raises:
        DoubleSolveError: the cell was already solved.
    """
    if not (0 <= s < D.k and 0 <= t < D.k):
        raise IndexError(f"cell ({s}, {t}) out of range for k={D.k}")
    if D.solved[s, t]:
        raise DoubleSolveError(f"cell ({s}, {t}) was already solved")
    Cxy = cost_matrix(xs.points, ys.points, ground_cost)
    Cxx = Cyy = None
    if kernel.kind == "sinkhorn_divergence":
        Cxx = cost_matrix(xs.points, xs.points, ground_cost)
        Cyy = cost_matrix(ys.points, ys.points, ground_cost)
    value = kernel_cost(kernel, Cxy, xs.weights, ys.weights, Cxx, Cyy)
    D.set_entry(s, t, value)
    solve_counter.increment()
    return D


def solve_meta(
    D: BatchCostMatrix, a_tilde: np.ndarray, b_tilde: np.ndarray
) -> tuple[float, BatchMatching]:
    """Optimal coupling of batches over the solved entries of D.

    Unsolved entries are replaced by a dominating sentinel before the exact
    solve; any optimal mass landing on a sentinel means the mask admits no
    fully-solved feasible support and raises :class:`InfeasibleMask`.

    Returns:
        (value, matching): the optimal masked objective and the coupling.
    """
    a_tilde = np.asarray(a_tilde, dtype=np.float64)
    b_tilde = np.asarray(b_tilde, dtype=np.float64)
    if a_tilde.shape != (D.k,) or b_tilde.shape != (D.k,):
        raise DimensionError(
            f"marginals must both have length k={D.k}, got {a_tilde.shape}, {b_tilde.shape}"
        )
    rows_uncovered = np.nonzero(~D.solved.any(axis=1))[0]
    cols_uncovered = np.nonzero(~D.solved.any(axis=0))[0]
    if rows_uncovered.size or cols_uncovered.size:
        raise InfeasibleMask(
            f"rows {rows_uncovered.tolist()} / columns {cols_uncovered.tolist()} "
            "have no solved entries"
        )
    solution = solve_exact(D.masked_with_sentinel(), a_tilde, b_tilde)
    W = solution.plan.entries
    stray = float(W[~D.solved].max(initial=0.0))
    if stray >= _MASS_EPS:
        raise InfeasibleMask(
            f"optimal coupling places mass {stray:.3e} on unsolved entries; "
            "the solved mask admits no feasible support"
        )
    value = float(np.sum(W[D.solved] * D.values[D.solved]))
    pairs = [(int(s), int(t)) for s, t in zip(*np.nonzero(W > _MASS_EPS))]
    matching = BatchMatching(tuple(pairs), W)
    matching.check_marginals(a_tilde, b_tilde)
    return value, matching


def dual_shift_matrix(dual_table: list) -> np.ndarray:
    """Feasible shift budget between diagonal dual templates, as a k x k matrix.

    Entry (s, t) is the largest value u_s + v_t may take while the shifted
    diagonal templates (f of problem (s,s) plus u_s, g of problem (t,t) plus
    v_t) stay dominated by the duals of problem (s, t):

        shift(s, t) = min_j [g^{st} - g^{tt}]_j - max_i [f^{ss} - f^{st}]_i

    The diagonal is exactly zero. All k^2 entries of the table must be present
    and exact.

    Args:
        dual_table: k x k nested sequence; cell (s, t) holds the
            :class:`DualPotentials` of the (s, t) batch problem.

    Raises:
        MissingDuals: a cell is None or absent.
        DualKindError: a cell holds approximate (entropic) potentials.
    """
    k = len(dual_table)
    for s in range(k):
        if len(dual_table[s]) != k:
            raise DimensionError(f"dual table row {s} has {len(dual_table[s])} cells, expected {k}")
        for t in range(k):
            cell = dual_table[s][t]
            if cell is None:
                raise MissingDuals(f"dual table cell ({s}, {t}) is missing")
            if not isinstance(cell, DualPotentials):
                raise TypeError(f"cell ({s}, {t}) is not DualPotentials")
            if not cell.exact:
                raise DualKindError(
                    f"cell ({s}, {t}) holds approximate duals; exact potentials required"
                )
    K = np.zeros((k, k))
    for s in range(k):
        for t in range(k):
            if s == t:
                continue
            g_term = float(np.min(dual_table[s][t].g - dual_table[t][t].g))
            f_term = float(np.max(dual_table[s][s].f - dual_table[s][t].f))
            K[s, t] = g_term - f_term
    return K

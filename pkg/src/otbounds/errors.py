"""Exception hierarchy for the otbounds package.

Every error raised by the library derives from :class:`OtBoundsError` so callers
can catch the whole family at once; the CLI maps subfamilies to exit codes.
"""

from __future__ import annotations

__all__ = [
    "OtBoundsError",
    "InvalidPartition",
    "DimensionError",
    "NonFiniteInput",
    "SolverStalled",
    "ConvergenceError",
    "DoubleSolveError",
    "InfeasibleMask",
    "MissingDuals",
    "DualKindError",
    "AssumptionError",
    "BudgetError",
    "MissingSubPlan",
    "DegenerateCovariance",
    "UnequalSamples",
    "DegenerateAspectRatio",
    "FormatError",
    "ParseError",
]


class OtBoundsError(Exception):
    """Base class for all otbounds errors."""


class InvalidPartition(OtBoundsError):
    """A batch partition request cannot be satisfied (k > N, or k does not divide N in strict mode)."""


class DimensionError(OtBoundsError):
    """Operand shapes are incompatible."""


class NonFiniteInput(OtBoundsError):
    """An input array contains NaN or infinity."""


class SolverStalled(OtBoundsError):
    """The exact solver hit its iteration cap or failed numerically before reaching optimality."""


class ConvergenceError(OtBoundsError):
    """Sinkhorn iterations exhausted max_iter before meeting the marginal tolerance.

    Attributes:
        marginal_error: L1 marginal error at the final iterate.
    """

    def __init__(self, message: str, marginal_error: float):
        super().__init__(message)
        self.marginal_error = marginal_error


class DoubleSolveError(OtBoundsError):
    """A batch cost entry was solved twice; budget accounting forbids re-solves."""


class InfeasibleMask(OtBoundsError):
    """The solved mask of a batch cost matrix admits no feasible coupling."""


class MissingDuals(OtBoundsError):
    """A dual-potentials table is missing an entry required by the computation."""


class DualKindError(OtBoundsError):
    """Exact dual potentials were required but approximate (Sinkhorn) ones were supplied."""


class AssumptionError(OtBoundsError):
    """The equal-batch-mass assumption (every batch carries mass 1/k) does not hold."""


class BudgetError(OtBoundsError):
    """A solve budget is outside the allowed range for the requested method."""


class MissingSubPlan(OtBoundsError):
    """A transport sub-plan is missing for a batch pair carrying positive matching weight."""


class DegenerateCovariance(OtBoundsError):
    """A batch is too small for its covariance to be defined (n < 2)."""


class UnequalSamples(OtBoundsError):
    """The two-sample permutation test requires equally sized samples."""


class DegenerateAspectRatio(OtBoundsError):
    """All points coincide, so the cost aspect ratio (and the quadtree depth) is undefined."""


class FormatError(OtBoundsError):
    """A dataset file violates its binary or structural format contract."""


class ParseError(OtBoundsError):
    """A dataset file contains an unparseable value.

    Attributes:
        row: zero-based row of the offending cell, when known.
        col: zero-based column of the offending cell, when known.
    """

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        super().__init__(message)
        self.row = row
        self.col = col

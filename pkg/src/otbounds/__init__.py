"""Budgeted upper and lower bounds on optimal transport between batched samples.

The package splits two point clouds into k batches each, solves small
transport problems between batches under a solve budget, and combines them
into certified bounds on the full transport cost. On top of the bounds sit a
permutation two-sample test and experiment runners with a CLI.

Typical use:

    from otbounds import EmpiricalMeasure, partition_contiguous, bhot

    X = EmpiricalMeasure.uniform(points_x)
    Y = EmpiricalMeasure.uniform(points_y)
    report = bhot(X, Y, partition_contiguous(X, 4), partition_contiguous(Y, 4))
"""

from .bounds import (
    BoundReport,
    Budget,
    Method,
    bhot,
    greedy_matching,
    missing_costs,
    missing_greedy,
    naive_average,
    proxy_bound,
)
from .datasets import DatasetFormat, ingest, rotate_images
from .errors import (
    AssumptionError,
    BudgetError,
    DualKindError,
    FormatError,
    OtBoundsError,
    ParseError,
)
from .experiments import (
    DriftReport,
    ExperimentConfig,
    SweepReport,
    load_json_report,
    run_bound_sweep,
    run_drift_test,
)
from .lower import LowerBoundReport, dual_lower_bound, verify_dual_feasibility
from .measures import (
    EmpiricalMeasure,
    GroundCost,
    cost_matrix,
    partition_contiguous,
    partition_shuffled,
)
from .solvers import (
    EXACT_KERNEL,
    KernelConfig,
    sinkhorn_divergence,
    solve_exact,
    solve_sinkhorn,
)
from .trees import bhot_star, bhot_tree, build_quadtree
from .twosample import (
    PermutationTestResult,
    compute_bound,
    make_bound_statistic,
    permutation_test,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # measures
    "EmpiricalMeasure",
    "GroundCost",
    "cost_matrix",
    "partition_contiguous",
    "partition_shuffled",
    # solvers
    "EXACT_KERNEL",
    "KernelConfig",
    "solve_exact",
    "solve_sinkhorn",
    "sinkhorn_divergence",
    # bounds
    "Method",
    "Budget",
    "BoundReport",
    "naive_average",
    "bhot",
    "greedy_matching",
    "missing_costs",
    "missing_greedy",
    "proxy_bound",
    # trees
    "build_quadtree",
    "bhot_tree",
    "bhot_star",
    # lower bound
    "LowerBoundReport",
    "dual_lower_bound",
    "verify_dual_feasibility",
    # two-sample test
    "PermutationTestResult",
    "compute_bound",
    "make_bound_statistic",
    "permutation_test",
    # datasets
    "DatasetFormat",
    "ingest",
    "rotate_images",
    # experiments
    "ExperimentConfig",
    "SweepReport",
    "DriftReport",
    "run_bound_sweep",
    "run_drift_test",
    "load_json_report",
    # errors
    "OtBoundsError",
    "AssumptionError",
    "BudgetError",
    "DualKindError",
    "FormatError",
    "ParseError",
]

"""Exact and entropy-regularized discrete optimal transport solvers.

The exact solver returns an optimal primal plan together with exact feasible
dual potentials (strong duality holds to machine precision), so downstream
bound constructions can consume either side of the problem. Two internal
routes are used: a fast assignment route for uniform equal-size marginals
(the optimum is a permutation; duals are recovered by Bellman-Ford relaxation
of the dual difference constraints and verified before returning) and a
simplex route on the full transportation linear program otherwise. Signed
cost matrices are supported on both routes.

The entropic solver runs in the log domain so it survives regularization as
small as 1e-3 times the mean cost.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp, xlogy

from .errors import ConvergenceError, DimensionError, NonFiniteInput, SolverStalled

__all__ = [
    "SolverKind",
    "TransportPlan",
    "DualPotentials",
    "OtSolution",
    "KernelConfig",
    "EXACT_KERNEL",
    "solve_exact",
    "solve_sinkhorn",
    "sinkhorn_divergence",
    "evaluate_plan",
]

_UNIFORM_TOL = 1e-12
_DUAL_FEAS_TOL = 1e-9
# exact-solver iteration cap, expressed per LP variable
_ITER_CAP_FACTOR = 50


class SolverKind(enum.Enum):
    EXACT = "exact"
    SINKHORN = "sinkhorn"
    SINKHORN_DIVERGENCE = "sinkhorn_divergence"


@dataclass(frozen=True)
class TransportPlan:
    """Nonnegative coupling matrix with prescribed marginals.

    Args:
        entries: (n, m) nonnegative matrix.
        row_marginal: length-n vector the rows must sum to.
        col_marginal: length-m vector the columns must sum to.
        marginal_tol: allowed L-inf deviation of the realized marginals
            (kept at 1e-9 for exact plans; entropic plans may pass a looser
            caller-chosen tolerance).
    """

    entries: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    marginal_tol: float = field(default=1e-9, repr=False, compare=False)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        a = np.asarray(self.row_marginal, dtype=np.float64)
        b = np.asarray(self.col_marginal, dtype=np.float64)
        if entries.ndim != 2 or entries.shape != (a.size, b.size):
            raise DimensionError(
                f"plan shape {entries.shape} does not match marginals ({a.size}, {b.size})"
            )
        if entries.min(initial=0.0) < -1e-12:
            raise ValueError(f"plan has negative entries (min {entries.min()})")
        entries = np.maximum(entries, 0.0)
        row_err = np.abs(entries.sum(axis=1) - a).max()
        col_err = np.abs(entries.sum(axis=0) - b).max()
        if max(row_err, col_err) > self.marginal_tol:
            raise ValueError(
                f"plan marginals off by {max(row_err, col_err):.3e} "
                f"(tolerance {self.marginal_tol:.1e})"
            )
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "row_marginal", a)
        object.__setattr__(self, "col_marginal", b)
        for name in ("entries", "row_marginal", "col_marginal"):
            getattr(self, name).setflags(write=False)


@dataclass(frozen=True)
class DualPotentials:
    """Kantorovich dual potentials (f, g).

    ``exact`` is True only for potentials produced by the exact solver, which
    are feasible (f_i + g_j <= C_ij) and satisfy strong duality; entropic
    potentials are approximate and are rejected wherever exact duals are
    required.
    """

    f: np.ndarray
    g: np.ndarray
    exact: bool = True

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=np.float64))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=np.float64))
        self.f.setflags(write=False)
        self.g.setflags(write=False)

    def objective(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.f @ a + self.g @ b)

    def feasibility_margin(self, C: np.ndarray) -> float:
        """min over (i, j) of C_ij - f_i - g_j; nonnegative means feasible."""
        return float((C - self.f[:, None] - self.g[None, :]).min())


@dataclass(frozen=True)
class OtSolution:
    value: float
    plan: TransportPlan
    duals: DualPotentials
    iterations: int
    solver_kind: SolverKind


def _validate_problem(C: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple:
    C = np.asarray(C, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if C.ndim != 2:
        raise DimensionError(f"cost matrix must be 2-D, got shape {C.shape}")
    if a.ndim != 1 or b.ndim != 1 or C.shape != (a.size, b.size):
        raise DimensionError(
            f"cost shape {C.shape} does not match marginal sizes ({a.size}, {b.size})"
        )
    if not np.all(np.isfinite(C)):
        raise NonFiniteInput("cost matrix contains non-finite entries")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFiniteInput("marginals contain non-finite entries")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("marginals must be strictly positive")
    if abs(a.sum() - 1.0) > 1e-9 or abs(b.sum() - 1.0) > 1e-9:
        raise ValueError("marginals must each sum to 1")
    return C, a, b


def _is_uniform(v: np.ndarray) -> bool:
    return bool(np.abs(v - 1.0 / v.size).max() <= _UNIFORM_TOL)


def _assignment_duals(C: np.ndarray, col_of_row: np.ndarray) -> tuple:
    """Optimal duals for an optimal assignment, by Bellman-Ford relaxation.

    Feasibility requires g_j - g_{pi(i)} <= C_ij - C_{i,pi(i)} for all (i, j);
    these are shortest-path difference constraints, solvable by at most n
    relaxation sweeps because the optimal assignment admits no negative cycle.
    """
    n = C.shape[0]
    rows = np.arange(n)
    matched = C[rows, col_of_row]
    W = C - matched[:, None]
    g = np.zeros(n)
    sweeps = 0
    for sweeps in range(1, n + 1):
        candidate = np.min(g[col_of_row][:, None] + W, axis=0)
        new_g = np.minimum(g, candidate)
        if np.array_equal(new_g, g):
            break
        g = new_g
    f = matched - g[col_of_row]
    return f, g, sweeps


def _solve_assignment(C: np.ndarray, a: np.ndarray, b: np.ndarray) -> OtSolution | None:
    n = C.shape[0]
    rows, cols = linear_sum_assignment(C)
    plan = np.zeros_like(C)
    plan[rows, cols] = a
    value = float(C[rows, cols] @ a)
    f, g, sweeps = _assignment_duals(C, cols)
    # verify before trusting the recovery; fall back to the LP route otherwise
    viol = float((f[:, None] + g[None, :] - C).max())
    gap = abs(value - (f @ a + g @ b))
    if viol > _DUAL_FEAS_TOL or gap > _DUAL_FEAS_TOL:
        return None
    return OtSolution(
        value=value,
        plan=TransportPlan(plan, a, b),
        duals=DualPotentials(f, g, exact=True),
        iterations=sweeps,
        solver_kind=SolverKind.EXACT,
    )


def _solve_lp(C: np.ndarray, a: np.ndarray, b: np.ndarray) -> OtSolution:
    n, m = C.shape
    var = np.arange(n * m)
    row_con = np.repeat(np.arange(n), m)
    col_con = n + np.tile(np.arange(m), n)
    A_eq = sparse.coo_matrix(
        (np.ones(2 * n * m), (np.concatenate([row_con, col_con]), np.concatenate([var, var]))),
        shape=(n + m, n * m),
    ).tocsr()
    res = linprog(
        C.ravel(),
        A_eq=A_eq,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
        options={"maxiter": _ITER_CAP_FACTOR * n * m},
    )
    if res.status == 1:
        raise SolverStalled(
            f"simplex hit the iteration cap {_ITER_CAP_FACTOR * n * m} on a "
            f"{n}x{m} problem without reaching optimality"
        )
    if res.status != 0:
        raise SolverStalled(f"exact solve failed (status {res.status}): {res.message}")
    plan = np.maximum(res.x.reshape(n, m), 0.0)
    marginals = np.asarray(res.eqlin.marginals, dtype=np.float64)
    f, g = marginals[:n], marginals[n:]
    value = float(np.sum(C * plan))
    viol = float((f[:, None] + g[None, :] - C).max())
    gap = abs(value - (f @ a + g @ b))
    if viol > 1e-7 or gap > 1e-7:
        raise SolverStalled(
            f"returned duals are inconsistent (feasibility violation {viol:.2e}, "
            f"duality gap {gap:.2e})"
        )
    return OtSolution(
        value=value,
        plan=TransportPlan(plan, a, b),
        duals=DualPotentials(f, g, exact=True),
        iterations=int(res.nit),
        solver_kind=SolverKind.EXACT,
    )


def solve_exact(C: np.ndarray, a: np.ndarray, b: np.ndarray) -> OtSolution:
    """Solve the discrete OT linear program exactly.

    Args:
        C: (n, m) finite cost matrix; negative entries are allowed.
        a: strictly positive row marginal summing to 1.
        b: strictly positive column marginal summing to 1.

    Returns:
        OtSolution with an optimal plan, exact feasible duals (strong duality
        within 1e-7, typically machine precision), and the optimal value.

    Raises:
        DimensionError: shape mismatch.
        NonFiniteInput: NaN/inf in any input.
        SolverStalled: iteration cap reached or a numerically inconsistent
            solution was produced.
    """
    C, a, b = _validate_problem(C, a, b)
    if C.shape[0] == C.shape[1] and _is_uniform(a) and _is_uniform(b):
        solution = _solve_assignment(C, a, b)
        if solution is not None:
            return solution
    return _solve_lp(C, a, b)


def solve_sinkhorn(
    C: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    epsilon: float,
    tol: float = 1e-9,
    max_iter: int = 10000,
) -> OtSolution:
    """Entropy-regularized OT via log-domain Sinkhorn iterations.

    The reported ``value`` is the linear transport cost <C, P> of the returned
    plan, without the entropy term. Dual potentials are the scaled log
    scalings, shifted so that <f, a> + <g, b> equals ``value``; they are
    approximate and marked ``exact=False``.

    Args:
        epsilon: regularization strength, > 0.
        tol: L1 marginal error at which iterations stop.
        max_iter: iteration budget.

    Raises:
        ConvergenceError: tolerance not met within max_iter; carries the last
            marginal error.
    """
    C, a, b = _validate_problem(C, a, b)
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    err = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        f = epsilon * (log_a - logsumexp((g[None, :] - C) / epsilon, axis=1))
        g = epsilon * (log_b - logsumexp((f[:, None] - C) / epsilon, axis=0))
        P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
        err = float(np.abs(P.sum(axis=1) - a).sum() + np.abs(P.sum(axis=0) - b).sum())
        if err <= tol:
            break
    else:
        raise ConvergenceError(
            f"Sinkhorn did not reach marginal tolerance {tol:.1e} in {max_iter} "
            f"iterations (last error {err:.3e})",
            marginal_error=err,
        )
    value = float(np.sum(C * P))
    f = f + (value - (f @ a + g @ b))  # pin the dual objective to the primal value
    return OtSolution(
        value=value,
        plan=TransportPlan(P, a, b, marginal_tol=max(tol, 1e-9)),
        duals=DualPotentials(f, g, exact=False),
        iterations=iterations,
        solver_kind=SolverKind.SINKHORN,
    )


def _entropic_objective(C: np.ndarray, solution: OtSolution, epsilon: float) -> float:
    # entropy convention: H(P) = sum P_ij (log P_ij - 1); the xlogy form maps 0 log 0 to 0
    P = solution.plan.entries
    entropy = float(xlogy(P, P).sum() - P.sum())
    return solution.value + epsilon * entropy


def sinkhorn_divergence(
    Cxy: np.ndarray,
    Cxx: np.ndarray,
    Cyy: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    epsilon: float,
    tol: float = 1e-9,
    max_iter: int = 10000,
) -> float:
    """Debiased entropic OT: OTe(a, b) - (OTe(a, a) + OTe(b, b)) / 2.

    Each term uses the full entropic objective <C, P> + eps * H(P). Zero for
    identical measures; converges to the independent-coupling cost gap as
    epsilon grows.

    Raises:
        ConvergenceError: propagated from any of the three solves.
    """
    Cxy = np.asarray(Cxy, dtype=np.float64)
    Cxx = np.asarray(Cxx, dtype=np.float64)
    Cyy = np.asarray(Cyy, dtype=np.float64)
    n, m = np.size(a), np.size(b)
    if Cxx.shape != (n, n) or Cyy.shape != (m, m):
        raise DimensionError(
            f"self-cost shapes {Cxx.shape}, {Cyy.shape} do not match marginal "
            f"sizes {n}, {m}"
        )
    cross = _entropic_objective(Cxy, solve_sinkhorn(Cxy, a, b, epsilon, tol, max_iter), epsilon)
    self_x = _entropic_objective(Cxx, solve_sinkhorn(Cxx, a, a, epsilon, tol, max_iter), epsilon)
    self_y = _entropic_objective(Cyy, solve_sinkhorn(Cyy, b, b, epsilon, tol, max_iter), epsilon)
    return cross - 0.5 * (self_x + self_y)


def evaluate_plan(C: np.ndarray, plan: TransportPlan) -> float:
    """Linear transport cost <C, P> of a plan under a cost matrix."""
    C = np.asarray(C, dtype=np.float64)
    if C.shape != plan.entries.shape:
        raise DimensionError(
            f"cost shape {C.shape} does not match plan shape {plan.entries.shape}"
        )
    return float(np.sum(C * plan.entries))


@dataclass(frozen=True)
class KernelConfig:
    """Which OT kernel a batch-cost entry is computed with.

    kind is one of "exact", "sinkhorn", "sinkhorn_divergence"; the epsilon,
    tol and max_iter fields only apply to the entropic kinds.
    """

    kind: str = "exact"
    epsilon: float = 1.0
    tol: float = 1e-9
    max_iter: int = 10000

    def __post_init__(self):
        if self.kind not in ("exact", "sinkhorn", "sinkhorn_divergence"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def is_exact(self) -> bool:
        return self.kind == "exact"


EXACT_KERNEL = KernelConfig(kind="exact")


def kernel_cost(
    kernel: KernelConfig,
    Cxy: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    Cxx: np.ndarray | None = None,
    Cyy: np.ndarray | None = None,
) -> float:
    """Scalar transport cost between two weighted supports under a kernel config."""
    if kernel.kind == "exact":
        return solve_exact(Cxy, a, b).value
    if kernel.kind == "sinkhorn":
        return solve_sinkhorn(Cxy, a, b, kernel.epsilon, kernel.tol, kernel.max_iter).value
    if Cxx is None or Cyy is None:
        raise ValueError("sinkhorn_divergence needs the two self-cost matrices")
    return sinkhorn_divergence(
        Cxy, Cxx, Cyy, a, b, kernel.epsilon, kernel.tol, kernel.max_iter
    )

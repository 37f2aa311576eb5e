"""Experiment orchestration: budget sweeps and distribution-drift tests.

Both runners take one validated config, execute every cell deterministically
(all randomness flows from the listed seeds), and emit a JSON report plus a
flat CSV table. Cells are keyed and sorted, so concurrency never changes the
output.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bounds import Budget, Method
from .datasets import DatasetFormat, ingest, rotate_images
from .errors import DualKindError
from .lower import dual_lower_bound
from .measures import (
    EmpiricalMeasure,
    GroundCost,
    cost_matrix,
    partition_contiguous,
)
from .solvers import EXACT_KERNEL, KernelConfig, solve_exact
from .twosample import compute_bound, make_bound_statistic, permutation_test

__all__ = [
    "LOWER_BOUND_NAME",
    "ExperimentConfig",
    "SweepCell",
    "SweepReport",
    "DriftCell",
    "DriftReport",
    "run_bound_sweep",
    "run_drift_test",
    "write_csv",
    "load_json_report",
]

# accepted in method lists alongside the Method enum values
LOWER_BOUND_NAME = "lower"

# methods whose cost is fixed by k (or by rho); they ignore the budget grid
_BUDGETED = (Method.GREEDY, Method.MISSING, Method.MISSING_GREEDY, Method.TREE)

_DEFAULT_EXACT_CELL_CAP = 4_000_000


def _normalize_method(name) -> str:
    if isinstance(name, Method):
        return name.value
    text = str(name).strip().lower().replace("-", "_")
    if text == LOWER_BOUND_NAME:
        return LOWER_BOUND_NAME
    return Method.from_name(text).value


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_x: str
    dataset_y: str | None = None
    format: DatasetFormat = DatasetFormat.CSV
    subsample_n: int = 200
    k: int = 10
    methods: tuple = (Method.NAIVE.value, Method.BHOT.value)
    budgets: tuple = ()
    kernel: KernelConfig = EXACT_KERNEL
    seeds: tuple = (0,)
    metric: GroundCost = GroundCost.EUCLIDEAN
    output: str = "report"
    alpha: float = 0.05
    angles: tuple = ()
    resamples: int = 200
    rho: float = 0.5
    jobs: int = 1
    figures: bool = True
    exact_cell_cap: int = _DEFAULT_EXACT_CELL_CAP

    def __post_init__(self):
        object.__setattr__(
            self, "format",
            self.format if isinstance(self.format, DatasetFormat)
            else DatasetFormat.from_name(self.format),
        )
        object.__setattr__(
            self, "metric",
            self.metric if isinstance(self.metric, GroundCost)
            else GroundCost.from_name(self.metric),
        )
        if not isinstance(self.kernel, KernelConfig):
            raise ValueError("kernel must be a KernelConfig")
        object.__setattr__(self, "methods", tuple(_normalize_method(m) for m in self.methods))
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.subsample_n < self.k or self.subsample_n % self.k != 0:
            raise ValueError(
                f"subsample size {self.subsample_n} must be a positive multiple of k={self.k}"
            )
        for b in self.budgets:
            Budget(b).validate(self.k)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.methods:
            raise ValueError("at least one method is required")
        needs_budget = [
            m for m in self.methods
            if m != LOWER_BOUND_NAME and Method(m) in _BUDGETED
        ]
        if needs_budget and not self.budgets:
            raise ValueError(
                f"methods {needs_budget} take a budget; pass a budgets list in [k, k^2]"
            )
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.resamples < 1:
            raise ValueError("resamples must be >= 1")

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ExperimentConfig":
        data = dict(payload)
        kernel = data.pop("kernel", None)
        if kernel is not None and not isinstance(kernel, KernelConfig):
            kernel = KernelConfig(
                kind=kernel.get("kind", "exact"),
                epsilon=kernel.get("epsilon", 1.0),
                tol=kernel.get("tol", 1e-9),
                max_iter=kernel.get("max_iter", 10000),
            )
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if kernel is not None:
            data["kernel"] = kernel
        return cls(**data)

    def to_json_dict(self) -> dict:
        return {
            "dataset_x": self.dataset_x,
            "dataset_y": self.dataset_y,
            "format": self.format.value,
            "subsample_n": self.subsample_n,
            "k": self.k,
            "methods": list(self.methods),
            "budgets": list(self.budgets),
            "kernel": {
                "kind": self.kernel.kind,
                "epsilon": self.kernel.epsilon,
                "tol": self.kernel.tol,
                "max_iter": self.kernel.max_iter,
            },
            "seeds": list(self.seeds),
            "metric": self.metric.value,
            "output": self.output,
            "alpha": self.alpha,
            "angles": list(self.angles),
            "resamples": self.resamples,
            "rho": self.rho,
            "jobs": self.jobs,
            "figures": self.figures,
            "exact_cell_cap": self.exact_cell_cap,
        }


@dataclass(frozen=True)
class SweepCell:
    method: str
    budget: int
    seed: int
    value: float | None  # None when the cell failed; see report["error"]
    relative_error: float | None
    wall_time_ms: float
    budget_used: int
    report: dict

    def csv_row(self) -> list:
        return [
            self.method,
            self.budget,
            self.seed,
            "" if self.value is None else repr(self.value),
            "" if self.relative_error is None else repr(self.relative_error),
            repr(self.wall_time_ms),
        ]


@dataclass(frozen=True)
class SweepReport:
    cells: tuple
    reference: dict
    config: dict

    CSV_HEADER = ["method", "budget", "seed", "value", "relative_error", "wall_time_ms"]

    def to_json_dict(self) -> dict:
        return {
            "kind": "sweep",
            "config": self.config,
            "reference": {str(seed): value for seed, value in self.reference.items()},
            "cells": [
                {
                    "method": c.method,
                    "budget": c.budget,
                    "seed": c.seed,
                    "value": c.value,
                    "relative_error": c.relative_error,
                    "wall_time_ms": c.wall_time_ms,
                    "budget_used": c.budget_used,
                    "report": c.report,
                }
                for c in self.cells
            ],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "SweepReport":
        cells = tuple(
            SweepCell(
                method=c["method"],
                budget=c["budget"],
                seed=c["seed"],
                value=c["value"],
                relative_error=c["relative_error"],
                wall_time_ms=c["wall_time_ms"],
                budget_used=c["budget_used"],
                report=c["report"],
            )
            for c in payload["cells"]
        )
        reference = {int(seed): value for seed, value in payload["reference"].items()}
        return cls(cells=cells, reference=reference, config=payload["config"])

    def csv_rows(self) -> list:
        return [c.csv_row() for c in self.cells]


@dataclass(frozen=True)
class DriftCell:
    method: str
    angle: float
    seed: int
    p_value: float
    reject: bool
    test: dict

    def csv_row(self) -> list:
        return [self.method, repr(self.angle), self.seed, repr(self.p_value), int(self.reject)]


@dataclass(frozen=True)
class DriftReport:
    cells: tuple
    alpha: float
    config: dict

    CSV_HEADER = ["method", "angle", "seed", "p_value", "reject"]

    def to_json_dict(self) -> dict:
        return {
            "kind": "drift",
            "config": self.config,
            "alpha": self.alpha,
            "cells": [
                {
                    "method": c.method,
                    "angle": c.angle,
                    "seed": c.seed,
                    "p_value": c.p_value,
                    "reject": c.reject,
                    "test": c.test,
                }
                for c in self.cells
            ],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "DriftReport":
        cells = tuple(
            DriftCell(
                method=c["method"],
                angle=c["angle"],
                seed=c["seed"],
                p_value=c["p_value"],
                reject=c["reject"],
                test=c["test"],
            )
            for c in payload["cells"]
        )
        return cls(cells=cells, alpha=payload["alpha"], config=payload["config"])

    def csv_rows(self) -> list:
        return [c.csv_row() for c in self.cells]


def write_csv(header, rows, path) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    with open(path, "w", newline="") as handle:
        handle.write(buffer.getvalue())


def load_json_report(path):
    with open(path) as handle:
        payload = json.load(handle)
    if payload.get("kind") == "sweep":
        return SweepReport.from_json_dict(payload)
    if payload.get("kind") == "drift":
        return DriftReport.from_json_dict(payload)
    raise ValueError(f"{path}: not a recognized report file")


def _subsample(measure: EmpiricalMeasure, n: int, rng) -> EmpiricalMeasure:
    if n > measure.n_points:
        raise ValueError(
            f"subsample size {n} exceeds the dataset size {measure.n_points}"
        )
    index = rng.choice(measure.n_points, size=n, replace=False)
    return EmpiricalMeasure.uniform(measure.points[index])


def _sweep_cell_keys(config: ExperimentConfig) -> list:
    keys = []
    for name in config.methods:
        if name != LOWER_BOUND_NAME and Method(name) in _BUDGETED:
            for budget in config.budgets:
                for seed in config.seeds:
                    keys.append((name, budget, seed))
        else:
            # fixed-cost methods: one cell per seed, budget recorded after the run
            for seed in config.seeds:
                keys.append((name, None, seed))
    return keys


def _run_sweep_cell(config: ExperimentConfig, data, key):
    name, budget, seed = key
    X, Y, px, py = data[seed]
    try:
        if name == LOWER_BOUND_NAME:
            report = dual_lower_bound(
                X, Y, px, py, kernel=config.kernel, ground_cost=config.metric
            )
            return (
                float(report.value),
                config.k * config.k,
                report.wall_time_ms,
                report.to_json_dict(),
            )
        report = compute_bound(
            name, X, Y, px, py, budget=budget, seed=seed, kernel=config.kernel,
            ground_cost=config.metric, rho=config.rho,
        )
        return float(report.value), report.budget_used, report.wall_time_ms, report.to_json_dict()
    except Exception as exc:  # cell failures are data, not crashes
        return None, 0, 0.0, {"error": f"{type(exc).__name__}: {exc}"}


def run_bound_sweep(config: ExperimentConfig) -> SweepReport:
    """Run every (method, budget, seed) cell and collect values and errors.

    The exact full-problem value is computed per seed as reference while
    N*M stays at or below the cell cap; above it the reference and the
    relative errors are omitted.
    """
    X_all = ingest(config.dataset_x, config.format)
    Y_all = ingest(config.dataset_y or config.dataset_x, config.format)

    data = {}
    reference = {}
    n = config.subsample_n
    for seed in config.seeds:
        rng = np.random.default_rng(seed)
        X = _subsample(X_all, n, rng)
        Y = _subsample(Y_all, n, rng)
        px = partition_contiguous(X, config.k)
        py = partition_contiguous(Y, config.k)
        data[seed] = (X, Y, px, py)
        if n * n <= config.exact_cell_cap:
            C = cost_matrix(X.points, Y.points, config.metric)
            reference[seed] = float(solve_exact(C, X.weights, Y.weights).value)

    keys = _sweep_cell_keys(config)

    def runner(key):
        return key, _run_sweep_cell(config, data, key)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = dict(pool.map(runner, keys))
    else:
        results = dict(map(runner, keys))

    cells = []
    for key in keys:
        name, budget, seed = key
        value, used, wall_ms, payload = results[key]
        exact = reference.get(seed)
        rel = None
        if value is not None and exact is not None and exact > 0.0:
            rel = abs(value - exact) / exact
        cells.append(
            SweepCell(
                method=name,
                budget=used if budget is None else budget,
                seed=seed,
                value=value,
                relative_error=rel,
                wall_time_ms=wall_ms,
                budget_used=used,
                report=payload,
            )
        )
    cells.sort(key=lambda c: (c.method, c.budget, c.seed))
    return SweepReport(cells=tuple(cells), reference=reference, config=config.to_json_dict())


def _drift_pair(images, n, angle, rng):
    index = rng.choice(images.shape[0], size=2 * n, replace=False)
    X = EmpiricalMeasure.uniform(images[index[:n]])
    Y = EmpiricalMeasure.uniform(rotate_images(images[index[n:]], angle))
    return X, Y


def run_drift_test(config: ExperimentConfig) -> DriftReport:
    """Permutation-test a dataset against rotated copies of itself.

    For each (method, angle, seed): draw two disjoint subsamples, rotate one
    by the angle, and test the null of equal distributions with the bound as
    the statistic.
    """
    if not config.angles:
        raise ValueError("the drift test needs at least one rotation angle")
    if config.kernel.kind != "exact" and LOWER_BOUND_NAME in config.methods:
        raise DualKindError("the lower-bound statistic needs the exact kernel")
    base = ingest(config.dataset_x, config.format)
    if 2 * config.subsample_n > base.n_points:
        raise ValueError(
            f"need 2*{config.subsample_n} distinct samples, dataset has {base.n_points}"
        )

    keys = [
        (name, angle, seed)
        for name in config.methods
        for angle in config.angles
        for seed in config.seeds
    ]

    def run_cell(key):
        name, angle, seed = key
        # one draw per trial seed: every method/angle cell of a trial sees the
        # same subsample pair, with only the rotation differing
        rng = np.random.default_rng(seed)
        X, Y = _drift_pair(base.points, config.subsample_n, angle, rng)
        if name == LOWER_BOUND_NAME:
            statistic = lambda A, B, s: float(
                dual_lower_bound(
                    A, B,
                    partition_contiguous(A, config.k), partition_contiguous(B, config.k),
                    kernel=config.kernel, ground_cost=config.metric,
                ).value
            )
        else:
            statistic = make_bound_statistic(
                name, config.k, kernel=config.kernel,
                ground_cost=config.metric, rho=config.rho,
            )
        result = permutation_test(
            X, Y, statistic, resamples=config.resamples, seed=seed
        )
        return key, result

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = dict(pool.map(run_cell, keys))
    else:
        results = dict(map(run_cell, keys))

    cells = []
    for key in keys:
        name, angle, seed = key
        result = results[key]
        cells.append(
            DriftCell(
                method=name,
                angle=angle,
                seed=seed,
                p_value=float(result.p_value),
                reject=bool(result.p_value < config.alpha),
                test=result.to_json_dict(),
            )
        )
    cells.sort(key=lambda c: (c.method, c.angle, c.seed))
    return DriftReport(cells=tuple(cells), alpha=config.alpha, config=config.to_json_dict())

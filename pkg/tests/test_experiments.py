"""Experiment runner tests: config validation, sweep cells, drift cells.

Sweep determinism is checked on everything except the wall-clock column,
which is genuine timing and varies between runs by construction.
"""

import json
import struct

import numpy as np
import pytest

from otbounds.batch_matrix import solve_counter
from otbounds.errors import BudgetError, DualKindError, FormatError
from otbounds.experiments import (
    DriftReport,
    ExperimentConfig,
    SweepReport,
    load_json_report,
    run_bound_sweep,
    run_drift_test,
    write_csv,
)
from otbounds.solvers import KernelConfig


def write_gaussian_csv(path, n, d, seed, shift=0.0):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(n, d)) + shift
    np.savetxt(path, data, delimiter=",")
    return str(path)


def write_idx(path, images):
    """images: uint8 array (count, side, side)."""
    count, rows, cols = images.shape
    header = struct.pack(">IIII", 0x00000803, count, rows, cols)
    path.write_bytes(header + images.tobytes())
    return str(path)


@pytest.fixture()
def csv_pair(tmp_path):
    x = write_gaussian_csv(tmp_path / "x.csv", 60, 3, seed=0)
    y = write_gaussian_csv(tmp_path / "y.csv", 60, 3, seed=1, shift=0.8)
    return x, y


@pytest.fixture()
def image_file(tmp_path):
    rng = np.random.default_rng(7)
    images = rng.integers(0, 256, size=(80, 6, 6), dtype=np.uint8)
    # bright block in one corner so rotation moves visible mass
    images[:, :2, :2] = 255
    return write_idx(tmp_path / "im.idx", images)


class TestConfig:
    def test_json_round_trip(self, csv_pair):
        x, y = csv_pair
        cfg = ExperimentConfig(
            dataset_x=x, dataset_y=y, subsample_n=12, k=3,
            methods=("naive", "greedy"), budgets=(3, 9), seeds=(0, 2),
            angles=(0.0, 45.0), alpha=0.1, rho=0.25,
        )
        again = ExperimentConfig.from_json_dict(
            json.loads(json.dumps(cfg.to_json_dict()))
        )
        assert again == cfg

    def test_kernel_dict_parsed(self):
        cfg = ExperimentConfig.from_json_dict({
            "dataset_x": "x.csv", "subsample_n": 12, "k": 2,
            "kernel": {"kind": "sinkhorn", "epsilon": 0.5},
        })
        assert cfg.kernel == KernelConfig(kind="sinkhorn", epsilon=0.5)

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_json_dict({"dataset_x": "x", "bogus": 1})

    def test_budget_outside_range(self):
        with pytest.raises(BudgetError, match="exceeds"):
            ExperimentConfig(dataset_x="x", subsample_n=8, k=2, budgets=(99,))

    def test_budgeted_method_needs_budgets(self):
        with pytest.raises(ValueError, match="budget"):
            ExperimentConfig(dataset_x="x", subsample_n=8, k=2, methods=("missing",))

    def test_subsample_must_divide(self):
        with pytest.raises(ValueError, match="multiple of k"):
            ExperimentConfig(dataset_x="x", subsample_n=10, k=3)

    def test_alpha_range(self):
        with pytest.raises(ValueError, match="alpha"):
            ExperimentConfig(dataset_x="x", subsample_n=8, k=2, alpha=1.5)

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown method"):
            ExperimentConfig(dataset_x="x", subsample_n=8, k=2, methods=("magic",))


class TestSweep:
    def run(self, csv_pair, **overrides):
        x, y = csv_pair
        params = dict(
            dataset_x=x, dataset_y=y, subsample_n=12, k=2,
            methods=("naive", "bhot"), seeds=(0, 1),
        )
        params.update(overrides)
        return run_bound_sweep(ExperimentConfig(**params))

    def cell_map(self, report):
        return {(c.method, c.budget, c.seed): c for c in report.cells}

    def test_bhot_dominates_naive(self, csv_pair):
        report = self.run(csv_pair)
        cells = self.cell_map(report)
        for seed in (0, 1):
            bhot = cells[("bhot", 4, seed)].value
            naive = cells[("naive", 2, seed)].value
            assert bhot <= naive + 1e-9

    def test_missing_full_budget_matches_bhot(self, csv_pair):
        report = self.run(
            csv_pair, methods=("bhot", "missing"), budgets=(4,), k=2
        )
        cells = self.cell_map(report)
        for seed in (0, 1):
            assert cells[("missing", 4, seed)].value == pytest.approx(
                cells[("bhot", 4, seed)].value, abs=1e-9
            )

    def test_reference_and_relative_error(self, csv_pair):
        report = self.run(csv_pair)
        assert set(report.reference) == {0, 1}
        for cell in report.cells:
            exact = report.reference[cell.seed]
            expected = abs(cell.value - exact) / exact
            assert cell.relative_error == pytest.approx(expected)
            assert cell.value >= exact - 1e-9  # all methods are upper bounds

    def test_reference_skipped_above_cap(self, csv_pair):
        report = self.run(csv_pair, exact_cell_cap=10)
        assert report.reference == {}
        assert all(c.relative_error is None for c in report.cells)

    def test_rerun_identical_apart_from_timing(self, csv_pair):
        first = self.run(csv_pair, methods=("naive", "bhot", "missing"),
                         budgets=(2, 4))
        second = self.run(csv_pair, methods=("naive", "bhot", "missing"),
                          budgets=(2, 4))
        timing = SweepReport.CSV_HEADER.index("wall_time_ms")
        strip = lambda rows: [r[:timing] + r[timing + 1:] for r in rows]
        assert strip(first.csv_rows()) == strip(second.csv_rows())
        assert first.reference == second.reference

    def test_cells_sorted_and_jobs_invariant(self, csv_pair):
        serial = self.run(csv_pair, methods=("naive", "bhot", "greedy"),
                          budgets=(2, 3, 4), jobs=1)
        threaded = self.run(csv_pair, methods=("naive", "bhot", "greedy"),
                            budgets=(2, 3, 4), jobs=4)
        keys = [(c.method, c.budget, c.seed) for c in serial.cells]
        assert keys == sorted(keys)
        assert keys == [(c.method, c.budget, c.seed) for c in threaded.cells]
        for a, b in zip(serial.cells, threaded.cells):
            assert a.value == pytest.approx(b.value, abs=1e-12)

    def test_cell_failure_recorded_not_raised(self, csv_pair):
        report = self.run(
            csv_pair, methods=("naive", "lower"),
            kernel=KernelConfig(kind="sinkhorn", epsilon=0.5),
        )
        cells = self.cell_map(report)
        failed = [c for c in report.cells if c.method == "lower"]
        assert len(failed) == 2
        for cell in failed:
            assert cell.value is None
            assert cell.relative_error is None
            assert "DualKindError" in cell.report["error"]
        # the naive cells still carry values
        assert cells[("naive", 2, 0)].value is not None

    def test_failed_cell_leaves_csv_field_empty(self, csv_pair):
        report = self.run(
            csv_pair, methods=("lower",),
            kernel=KernelConfig(kind="sinkhorn", epsilon=0.5),
        )
        value_col = SweepReport.CSV_HEADER.index("value")
        for row in report.csv_rows():
            assert row[value_col] == ""

    def test_solve_budget_never_exceeded(self, csv_pair):
        solve_counter.reset()
        report = self.run(
            csv_pair, methods=("naive", "bhot", "greedy", "missing"),
            budgets=(2, 4), k=2,
        )
        spent = solve_counter.value
        allowed = sum(c.budget for c in report.cells)
        assert 0 < spent <= allowed

    def test_lower_bound_method_in_sweep(self, csv_pair):
        report = self.run(csv_pair, methods=("lower",), seeds=(0,))
        (cell,) = report.cells
        assert cell.method == "lower"
        assert cell.budget == 4  # k^2 duals
        assert cell.value <= report.reference[0] + 1e-7
        assert cell.report["feasibility_margin"] >= -1e-7

    def test_subsample_larger_than_dataset(self, csv_pair):
        with pytest.raises(ValueError, match="subsample"):
            self.run(csv_pair, subsample_n=120, k=2)

    def test_json_round_trip(self, csv_pair, tmp_path):
        report = self.run(csv_pair)
        path = tmp_path / "sweep.json"
        path.write_text(json.dumps(report.to_json_dict()))
        again = load_json_report(str(path))
        assert isinstance(again, SweepReport)
        assert again == report


class TestDrift:
    def run(self, image_file, **overrides):
        params = dict(
            dataset_x=image_file, format="idx", subsample_n=16, k=2,
            methods=("naive",), angles=(0.0, 90.0), seeds=(0, 1),
            resamples=19,
        )
        params.update(overrides)
        return run_drift_test(ExperimentConfig(**params))

    def test_identical_seeds_identical_pvalues(self, image_file):
        first = self.run(image_file)
        second = self.run(image_file)
        assert first.cells == second.cells

    def test_reject_flag_tracks_alpha(self, image_file):
        report = self.run(image_file, alpha=0.5, seeds=(0, 1, 2))
        assert any(c.reject for c in report.cells)
        for cell in report.cells:
            assert cell.reject == (cell.p_value < report.alpha)

    def test_strong_rotation_detected(self, image_file):
        # bright-corner images rotated a quarter turn: every trial rejects
        report = self.run(
            image_file, methods=("bhot",), angles=(90.0,),
            seeds=(0, 1, 2), resamples=39, subsample_n=24,
        )
        for cell in report.cells:
            assert cell.p_value == pytest.approx(1.0 / 40.0)

    def test_null_angle_not_rejected_overall(self, image_file):
        report = self.run(
            image_file, angles=(0.0,), seeds=tuple(range(9)), alpha=0.05
        )
        rejections = sum(c.reject for c in report.cells)
        assert rejections <= 2

    def test_angles_required(self, image_file):
        with pytest.raises(ValueError, match="angle"):
            self.run(image_file, angles=())

    def test_non_square_data_rejected(self, csv_pair):
        x, _ = csv_pair
        with pytest.raises(FormatError, match="square"):
            self.run(x, format="csv", subsample_n=12)

    def test_lower_needs_exact_kernel(self, image_file):
        with pytest.raises(DualKindError):
            self.run(
                image_file, methods=("lower",),
                kernel=KernelConfig(kind="sinkhorn", epsilon=0.5),
            )

    def test_lower_bound_statistic_runs(self, image_file):
        report = self.run(image_file, methods=("lower",), angles=(0.0,),
                          seeds=(0,))
        (cell,) = report.cells
        assert 0.0 < cell.p_value <= 1.0

    def test_json_round_trip(self, image_file, tmp_path):
        report = self.run(image_file)
        path = tmp_path / "drift.json"
        path.write_text(json.dumps(report.to_json_dict()))
        again = load_json_report(str(path))
        assert isinstance(again, DriftReport)
        assert again == report

    def test_cells_sorted(self, image_file):
        report = self.run(image_file, seeds=(1, 0), angles=(90.0, 0.0))
        keys = [(c.method, c.angle, c.seed) for c in report.cells]
        assert keys == sorted(keys)


class TestCsvOutput:
    def test_unix_newlines_and_header(self, tmp_path, csv_pair):
        x, y = csv_pair
        report = run_bound_sweep(ExperimentConfig(
            dataset_x=x, dataset_y=y, subsample_n=8, k=2, seeds=(0,)
        ))
        path = tmp_path / "out.csv"
        write_csv(SweepReport.CSV_HEADER, report.csv_rows(), str(path))
        raw = path.read_bytes()
        assert b"\r" not in raw
        text = raw.decode()
        assert text.splitlines()[0] == "method,budget,seed,value,relative_error,wall_time_ms"
        assert text.endswith("\n")

    def test_csv_fields_parse_back(self, tmp_path, image_file):
        report = run_drift_test(ExperimentConfig(
            dataset_x=image_file, format="idx", subsample_n=16, k=2,
            methods=("naive",), angles=(0.0,), seeds=(0,), resamples=9,
        ))
        path = tmp_path / "drift.csv"
        write_csv(DriftReport.CSV_HEADER, report.csv_rows(), str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "method,angle,seed,p_value,reject"
        method, angle, seed, p, reject = lines[1].split(",")
        assert method == "naive"
        assert float(angle) == 0.0
        assert float(p) == pytest.approx(report.cells[0].p_value)
        assert reject in {"0", "1"}

"""Command line entry points: budget sweeps and rotation drift tests.

Exit codes: 0 success, 2 configuration error, 3 I/O or data-format error.
A JSON config file passed with --config overrides any flag.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import BudgetError, DualKindError, FormatError, ParseError
from .experiments import (
    ExperimentConfig,
    run_bound_sweep,
    run_drift_test,
    write_csv,
)
from .figures import render_drift_figure, render_sweep_figure

EXIT_CONFIG = 2
EXIT_IO = 3


def _parse_list(text, cast):
    return tuple(cast(part.strip()) for part in str(text).split(",") if part.strip())


def _shared_options(command):
    options = [
        click.option("--dataset-x", required=True, help="path to the source dataset"),
        click.option("--dataset-y", default=None, help="path to the target dataset"),
        click.option("--format", "fmt", default="csv", show_default=True,
                     help="dataset format: csv or idx"),
        click.option("--n", "subsample_n", default=200, show_default=True, type=int,
                     help="points drawn per sample"),
        click.option("--k", default=10, show_default=True, type=int,
                     help="number of batches per sample"),
        click.option("--methods", default="naive,bhot", show_default=True,
                     help="comma list of bound methods (plus 'lower')"),
        click.option("--budgets", default="", help="comma list of solve budgets in [k, k^2]"),
        click.option("--kernel", default="exact", show_default=True,
                     help="exact, sinkhorn, or sinkhorn_divergence"),
        click.option("--epsilon", default=1.0, show_default=True, type=float,
                     help="entropic regularization strength"),
        click.option("--seeds", default="0", show_default=True,
                     help="comma list of seeds; one run (or trial) per seed"),
        click.option("--metric", default="euclidean", show_default=True,
                     help="ground cost between points"),
        click.option("--alpha", default=0.05, show_default=True, type=float,
                     help="rejection level for the drift test"),
        click.option("--angles", default="", help="comma list of rotation angles in degrees"),
        click.option("--out", "output", default="report", show_default=True,
                     help="output stem; writes <out>.json, <out>.csv, <out>.png"),
        click.option("--resamples", default=200, show_default=True, type=int,
                     help="permutation resamples per drift cell"),
        click.option("--rho", default=0.5, show_default=True, type=float,
                     help="tree-count exponent for the star method"),
        click.option("--jobs", default=1, show_default=True, type=int,
                     help="concurrent cells"),
        click.option("--figures/--no-figures", default=True, show_default=True,
                     help="render PNG figures next to the CSV"),
        click.option("--config", "config_path", default=None,
                     help="JSON config file; its keys override flags"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _build_config(config_path, **flags) -> ExperimentConfig:
    payload = {
        "dataset_x": flags["dataset_x"],
        "dataset_y": flags["dataset_y"],
        "format": flags["fmt"],
        "subsample_n": flags["subsample_n"],
        "k": flags["k"],
        "methods": _parse_list(flags["methods"], str),
        "budgets": _parse_list(flags["budgets"], int),
        "kernel": {"kind": flags["kernel"], "epsilon": flags["epsilon"]},
        "seeds": _parse_list(flags["seeds"], int),
        "metric": flags["metric"],
        "alpha": flags["alpha"],
        "angles": _parse_list(flags["angles"], float),
        "output": flags["output"],
        "resamples": flags["resamples"],
        "rho": flags["rho"],
        "jobs": flags["jobs"],
        "figures": flags["figures"],
    }
    if config_path is not None:
        overrides = json.loads(Path(config_path).read_text())
        if not isinstance(overrides, dict):
            raise ValueError("config must be a JSON object")
        kernel_overrides = overrides.pop("kernel", None)
        if isinstance(kernel_overrides, dict):
            payload["kernel"] = {**payload["kernel"], **kernel_overrides}
        payload.update(overrides)
    return ExperimentConfig.from_json_dict(payload)


def _fail(code: int, message: str) -> int:
    click.echo(f"error: {message}", err=True)
    return code


def _emit(report, out_stem: str, figures: bool, render) -> None:
    stem = Path(out_stem)
    if stem.parent != Path("."):
        stem.parent.mkdir(parents=True, exist_ok=True)
    json_path = stem.with_suffix(".json")
    csv_path = stem.with_suffix(".csv")
    json_path.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    write_csv(report.CSV_HEADER, report.csv_rows(), csv_path)
    click.echo(f"wrote {json_path}")
    click.echo(f"wrote {csv_path}")
    if figures:
        png_path = stem.with_suffix(".png")
        render(report, png_path)
        click.echo(f"wrote {png_path}")


def _run(kind, config_path, flags) -> int:
    try:
        config = _build_config(config_path, **flags)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read config: {exc}")
    except (ValueError, BudgetError, FormatError, TypeError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        if kind == "sweep":
            report = run_bound_sweep(config)
            render = render_sweep_figure
        else:
            report = run_drift_test(config)
            render = render_drift_figure
    except (ValueError, BudgetError, DualKindError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (FormatError, ParseError, OSError) as exc:
        return _fail(EXIT_IO, str(exc))
    try:
        _emit(report, config.output, config.figures, render)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write output: {exc}")
    return 0


@click.group()
def main():
    """Transport bounds: budget sweeps and drift tests over batched samples."""


@main.command()
@_shared_options
def sweep(config_path, **flags):
    """Sweep bound methods over solve budgets and compare against exact."""
    sys.exit(_run("sweep", config_path, flags))


@main.command()
@_shared_options
def drift(config_path, **flags):
    """Permutation-test a dataset against rotated copies of itself."""
    sys.exit(_run("drift", config_path, flags))


if __name__ == "__main__":
    main()

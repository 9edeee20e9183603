"""Command-line surface: run studies, estimate from CSV, format tables.

Exit codes: 0 success, 1 user/config error, 2 partial computational
failure.  ``simulate`` and ``estimate`` always leave a ``manifest.json``
in the output directory, whatever the exit path, recording the command,
seed, version, timestamps, and produced files.
"""

from __future__ import annotations

import datetime
import json
import os
import sys
from pathlib import Path

import click
import yaml

from . import __version__
from .data import read_dataset_csv
from .estimators import (
    BayesianSparsePSEstimator,
    LassoPropensityScoreEstimator,
    OptimalBayesianSparsePSEstimator,
    PropensityScoreEstimator,
)
from .exceptions import DataFormatError, SparsePSError
from .simulation import (
    METHODS,
    MetricsRow,
    ScenarioConfig,
    metrics_to_csv,
    read_metrics_csv,
    replications_to_json,
    run_monte_carlo,
)

WORKERS_ENV = "SPARSEPS_WORKERS"


class _ConfigError(Exception):
    pass


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class _Manifest:
    """Run record written to the output directory on every exit path."""

    def __init__(self, command: str, out_dir: Path, config_path=None, seed=None):
        self.record = {
            "command": command,
            "config": str(config_path) if config_path else None,
            "seed": seed,
            "version": __version__,
            "started_at": _now(),
            "finished_at": None,
            "outputs": [],
            "overrides": {},
            "exit_code": None,
        }
        self.out_dir = out_dir

    def add_output(self, path: Path):
        self.record["outputs"].append(str(path))

    def finish(self, exit_code: int):
        self.record["finished_at"] = _now()
        self.record["exit_code"] = exit_code
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "manifest.json"
        with open(path, "w") as fh:
            json.dump(self.record, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _load_yaml(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise _ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}: " if mark else f"{path}: "
        raise _ConfigError(where + str(getattr(err, "problem", err))) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise _ConfigError(f"{path}: top level must be a mapping")
    return raw


def _apply_override(raw: dict, spec: str) -> None:
    if "=" not in spec:
        raise _ConfigError(f"--set expects key=value, got {spec!r}")
    key, value = spec.split("=", 1)
    parsed = yaml.safe_load(value) if value != "" else None
    if key in ("methods",):
        parsed = [m.strip() for m in str(value).split(",") if m.strip()]
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise _ConfigError(f"--set {key}: {part} is not a section")
    node[parts[-1]] = parsed


def _worker_count(flag_value: int | None, config_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise _ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if config_value is not None:
        return config_value
    return os.cpu_count() or 1


@click.group()
@click.version_option(version=__version__)
def main():
    """Sparse propensity-score estimation tools."""


@main.command()
@click.option("--config", "config_path", required=True, help="Scenario YAML file.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Master seed override.")
@click.option("--set", "overrides", multiple=True, help="Config override key=value (repeatable).")
@click.option("--methods", default=None, help="Comma-separated method subset.")
@click.option("--burn-in", type=int, default=None, help="Burn-in override for both chains.")
@click.option("--kept", type=int, default=None, help="Kept-draws override for both chains.")
@click.option("--workers", type=int, default=None, help="Process-pool size.")
def simulate(config_path, out_dir, seed, overrides, methods, burn_in, kept, workers):
    """Run a Monte Carlo scenario and write metrics, details, manifest."""
    out = Path(out_dir)
    manifest = _Manifest("simulate", out, config_path=config_path, seed=seed)
    code = 0
    try:
        raw = _load_yaml(config_path)
        applied = {}
        for spec in overrides:
            _apply_override(raw, spec)
            key, _, value = spec.partition("=")
            applied[key] = value
        if seed is not None:
            raw["seed"] = seed
        if methods is not None:
            raw["methods"] = [m.strip() for m in methods.split(",") if m.strip()]
        for name, value in (("burn_in", burn_in), ("kept", kept)):
            if value is not None:
                chains = raw.setdefault("chains", {})
                for method in ("bsps", "obsps"):
                    chains.setdefault(method, {})[name] = value
        manifest.record["overrides"] = applied
        try:
            config = ScenarioConfig.from_dict(raw)
        except (ValueError, TypeError) as err:
            raise _ConfigError(f"{config_path}: {err}") from None
        manifest.record["seed"] = config.seed
        n_workers = _worker_count(workers, config.workers)

        rows, details = run_monte_carlo(config, workers=n_workers)
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        metrics_to_csv(rows, metrics_path)
        manifest.add_output(metrics_path)
        reps_path = out / "replications.json"
        replications_to_json(config, details, reps_path)
        manifest.add_output(reps_path)

        incomplete = [r for r in rows if r.n_converged < config.B]
        for row in rows:
            click.echo(
                f"{row.scenario} {row.method}: {row.n_converged}/{config.B} converged"
            )
        if incomplete:
            code = 2
            click.echo(
                "partial failures in: " + ", ".join(r.method for r in incomplete),
                err=True,
            )
    except _ConfigError as err:
        click.echo(f"error: {err}", err=True)
        code = 1
    finally:
        manifest.finish(code)
    sys.exit(code)


def _estimator_for(method: str, options: dict, seed: int):
    level = options.get("level", 0.95)
    if method == "ps":
        return PropensityScoreEstimator(level=level)
    if method == "lasso":
        opts = dict(_ESTIMATE_LASSO_DEFAULTS)
        opts.update(options.get("lasso", {}))
        return LassoPropensityScoreEstimator(level=level, random_state=seed, **opts)
    chains = options.get("chains", {})
    burn_in = int(chains.get("burn_in", 2000))
    kept = int(chains.get("kept", 2000))
    priors = options.get("priors", {})
    if method == "bsps":
        return BayesianSparsePSEstimator(
            burn_in=burn_in, kept=kept, level=level, random_state=seed, **priors
        )
    return OptimalBayesianSparsePSEstimator(
        burn_in=burn_in, kept=kept, level=level, random_state=seed, **priors
    )


_ESTIMATE_LASSO_DEFAULTS = {"n_lambdas": 50, "lambda_min_ratio": 1e-3, "folds": 5}


@main.command()
@click.argument("csv_path", type=click.Path())
@click.option("--method", type=click.Choice(["ps", "lasso", "bsps", "obsps"]), default="bsps")
@click.option("--config", "config_path", default=None, help="Optional estimation settings YAML.")
@click.option("--out", "out_dir", type=click.Path(), default="estimate_out")
@click.option("--seed", type=int, default=0)
@click.option("--burn-in", type=int, default=None)
@click.option("--kept", type=int, default=None)
def estimate(csv_path, method, config_path, out_dir, seed, burn_in, kept):
    """Estimate the outcome mean from a y,delta,covariates CSV file."""
    out = Path(out_dir)
    manifest = _Manifest("estimate", out, config_path=config_path, seed=seed)
    code = 0
    try:
        options = _load_yaml(config_path) if config_path else {}
        if burn_in is not None:
            options.setdefault("chains", {})["burn_in"] = burn_in
        if kept is not None:
            options.setdefault("chains", {})["kept"] = kept
        try:
            data, names = read_dataset_csv(csv_path)
        except (DataFormatError, OSError) as err:
            raise _ConfigError(f"{csv_path}: {err}") from None

        estimator = _estimator_for(method, options, seed)
        try:
            estimator.fit_dataset(data)
        except SparsePSError as err:
            click.echo(f"estimator failed: {type(err).__name__}: {err}", err=True)
            code = 2
            return
        report = estimator.report().to_dict()
        report["covariates"] = names
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.json"
        with open(report_path, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
        manifest.add_output(report_path)
        click.echo(
            f"{method}: theta_hat={report['theta_hat']:.6g} "
            f"se={report['se_hat']:.6g} "
            f"ci=[{report['ci_low']:.6g}, {report['ci_high']:.6g}]"
        )
    except _ConfigError as err:
        click.echo(f"error: {err}", err=True)
        code = 1
    finally:
        manifest.finish(code)
    sys.exit(code)


_REPORT_ORDER = {m: i for i, m in enumerate(METHODS)}
_REPORT_LABEL = {"ps": "PS", "tps": "TPS", "lasso": "LASSO", "bsps": "BSPS", "obsps": "OBSPS"}


def _scenario_parts(scenario: str):
    # scenario ids look like M1-rho0.5-p50-n200
    model, rho, p, n = scenario.split("-")
    return model, float(rho[3:]), int(p[1:]), int(n[1:])


def _fmt_cell(value, scale=1.0, width=8):
    if value is None:
        return " " * width
    return f"{value * scale:.1f}".rjust(width)


def format_metrics_table(rows: list[MetricsRow]) -> str:
    """Aligned text table in the study's layout, grouped by (rho, p)."""
    keyed = []
    for row in rows:
        model, rho, p, n = _scenario_parts(row.scenario)
        keyed.append(((model, rho, p, n, _REPORT_ORDER.get(row.method, 99)), row))
    keyed.sort(key=lambda kv: kv[0])

    header = (
        f"{'model':<6}{'rho':>5}{'p':>5}{'n':>6}  {'method':<7}"
        f"{'Rbias*100':>10}{'S.E.*100':>10}{'E[S.E.]*100':>12}{'CP*100':>8}{'TPR':>6}{'TNR':>6}"
    )
    lines = [header, "-" * len(header)]
    previous = None
    for (model, rho, p, n, _), row in keyed:
        group = (model, rho, p, n)
        if group != previous:
            if previous is not None:
                lines.append("")
            prefix = f"{model:<6}{rho:>5g}{p:>5}{n:>6}"
            previous = group
        else:
            prefix = " " * 22
        label = _REPORT_LABEL.get(row.method, row.method.upper())
        lines.append(
            prefix
            + f"  {label:<7}"
            + _fmt_cell(row.rbias, 100.0, 10)
            + _fmt_cell(row.se, 100.0, 10)
            + _fmt_cell(row.mean_se_hat, 100.0, 12)
            + _fmt_cell(row.cp, 100.0, 8)
            + _fmt_cell(row.tpr, 1.0, 6)
            + _fmt_cell(row.tnr, 1.0, 6)
        )
    return "\n".join(lines) + "\n"


@main.command()
@click.argument("results_dir", type=click.Path())
def report(results_dir):
    """Print the metrics of a finished run as an aligned table."""
    metrics_path = Path(results_dir) / "metrics.csv"
    if not metrics_path.is_file():
        click.echo(f"error: no metrics.csv under {results_dir}", err=True)
        sys.exit(1)
    try:
        rows = read_metrics_csv(metrics_path)
    except (ValueError, OSError) as err:
        click.echo(f"error: corrupt metrics file: {err}", err=True)
        sys.exit(1)
    click.echo(format_metrics_table(rows), nl=False)
    sys.exit(0)


if __name__ == "__main__":
    main()

"""Synthetic-data study: generating processes, replication driver, metrics.

Covariates are unit-variance with first-order autoregressive correlation;
two outcome laws are provided (linear, and quadratic-plus-shift so the
linear working model is misspecified) and one response mechanism driven
by the intercept and the first stochastic covariate.  Replications are
fully determined by ``(seed, replication index)`` through independent
substreams for covariates, outcome noise, response draws, and each
method, so results are identical no matter which methods run or how
work is scheduled across processes.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import Dataset
from .estimators import (
    BayesianSparsePSEstimator,
    LassoPropensityScoreEstimator,
    OptimalBayesianSparsePSEstimator,
    PropensityScoreEstimator,
)
from .exceptions import SparsePSError
from .model import link_logistic
from .streams import substream, substream_seed

__all__ = [
    "METHODS",
    "ScenarioConfig",
    "RepRecord",
    "MetricsRow",
    "gen_covariates",
    "gen_outcome",
    "gen_response",
    "true_theta",
    "true_response_support",
    "true_working_support",
    "generate_dataset",
    "run_replication",
    "compute_metrics",
    "run_monte_carlo",
    "metrics_to_csv",
    "read_metrics_csv",
    "replications_to_json",
]

METHODS = ("ps", "tps", "lasso", "bsps", "obsps")

# Fixed substream slots so a method's draws do not depend on which other
# methods were requested.
_DATA_SLOTS = {"covariates": 0, "outcome": 1, "response": 2}
_METHOD_SLOTS = {"ps": 10, "tps": 11, "lasso": 12, "bsps": 13, "obsps": 14}

_DEFAULT_CHAINS = {
    "bsps": {"burn_in": 2000, "kept": 2000},
    "obsps": {"burn_in": 2000, "kept": 2000},
}
_DEFAULT_LASSO = {"folds": 5, "n_lambdas": 50, "lambda_min_ratio": 1e-3}


@dataclass
class ScenarioConfig:
    """One simulation scenario: generating law, size, methods, seeding."""

    model: str = "M1"
    rho: float = 0.0
    p: int = 10
    n: int = 200
    B: int = 200
    methods: tuple = METHODS
    seed: int = 0
    chains: dict = field(default_factory=lambda: json.loads(json.dumps(_DEFAULT_CHAINS)))
    lasso: dict = field(default_factory=lambda: dict(_DEFAULT_LASSO))
    workers: int | None = None

    def __post_init__(self):
        if self.model not in ("M1", "M2"):
            raise ValueError(f"model must be M1 or M2, got {self.model!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        min_p = 4 if self.model == "M2" else 2
        if self.p < min_p:
            raise ValueError(f"model {self.model} needs p >= {min_p}")
        if self.n < 1 or self.B < 1:
            raise ValueError("need n >= 1 and B >= 1")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        self.methods = tuple(self.methods)
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
        chains = json.loads(json.dumps(_DEFAULT_CHAINS))
        for name, spec in (self.chains or {}).items():
            if name not in chains:
                raise ValueError(f"chain settings for unknown method {name!r}")
            chains[name].update(spec)
        self.chains = chains
        lasso = dict(_DEFAULT_LASSO)
        lasso.update(self.lasso or {})
        self.lasso = lasso

    @property
    def d(self) -> int:
        return self.p + 1

    @property
    def scenario_id(self) -> str:
        return f"{self.model}-rho{self.rho:g}-p{self.p}-n{self.n}"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


def gen_covariates(n: int, p: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Design matrix: intercept column plus p autoregressive N(0,1) columns.

    Column j+1 is ``rho * column_j + sqrt(1 - rho^2) * fresh noise``, so
    columns j and k correlate as ``rho^|j-k|``.  Columns are drawn one at
    a time: for a fixed stream, the first columns are identical whatever
    p is, which keeps oracle fits comparable across dimensions.
    """
    if not 0.0 <= abs(rho) < 1.0:
        raise ValueError("need |rho| < 1")
    X = np.empty((n, p + 1))
    X[:, 0] = 1.0
    col = rng.standard_normal(n)
    X[:, 1] = col
    scale = np.sqrt(1.0 - rho * rho)
    for j in range(2, p + 1):
        col = rho * col + scale * rng.standard_normal(n)
        X[:, j] = col
    return X


def gen_outcome(model: str, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Outcome draws, mean 2 in both laws (unit-variance covariates)."""
    n = X.shape[0]
    e = rng.standard_normal(n)
    if model == "M1":
        if X.shape[1] < 3:
            raise ValueError("M1 needs at least 2 stochastic columns")
        return 2.0 + 2.0 * X[:, 2] + e
    if model == "M2":
        if X.shape[1] < 4:
            raise ValueError("M2 needs at least 3 stochastic columns")
        return 1.5 + 0.5 * X[:, 2] ** 2 + 2.0 * X[:, 3] + e
    raise ValueError(f"unknown model {model!r}")


def gen_response(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli response indicators with log-odds ``1 + X[:, 1]``."""
    prob = link_logistic(X[:, 0] + X[:, 1])
    return (rng.random(X.shape[0]) < prob).astype(np.int8)


def true_theta(model: str) -> float:
    """Population outcome mean: 2 for both laws."""
    if model not in ("M1", "M2"):
        raise ValueError(f"unknown model {model!r}")
    return 2.0


def true_response_support(d: int) -> np.ndarray:
    """Indicator of the response-model columns: intercept and column 1."""
    z = np.zeros(d, dtype=np.int8)
    z[0] = 1
    z[1] = 1
    return z


def true_working_support(model: str, d: int) -> np.ndarray:
    """Response columns plus the covariate the outcome loads on linearly."""
    u = true_response_support(d)
    u[2 if model == "M1" else 3] = 1
    return u


def generate_dataset(config: ScenarioConfig, rep: int) -> Dataset:
    """Data for one replication, from its three dedicated substreams."""
    X = gen_covariates(
        config.n, config.p, config.rho, substream(config.seed, rep, _DATA_SLOTS["covariates"])
    )
    y = gen_outcome(config.model, X, substream(config.seed, rep, _DATA_SLOTS["outcome"]))
    delta = gen_response(X, substream(config.seed, rep, _DATA_SLOTS["response"]))
    return Dataset(x=X, y=y, delta=delta)


@dataclass
class RepRecord:
    """Outcome of one method on one replication."""

    method: str
    theta_hat: float | None = None
    se_hat: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    support: list | None = None
    converged: bool = False
    error: str | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _make_estimator(method: str, config: ScenarioConfig, rep: int):
    seed = substream_seed(config.seed, rep, _METHOD_SLOTS[method])
    if method == "ps":
        return PropensityScoreEstimator()
    if method == "tps":
        return PropensityScoreEstimator(support=[0])
    if method == "lasso":
        opts = config.lasso
        return LassoPropensityScoreEstimator(
            n_lambdas=opts["n_lambdas"],
            lambda_min_ratio=opts["lambda_min_ratio"],
            folds=opts["folds"],
            random_state=seed,
        )
    if method == "bsps":
        spec = config.chains["bsps"]
        return BayesianSparsePSEstimator(
            burn_in=spec["burn_in"], kept=spec["kept"], random_state=seed
        )
    if method == "obsps":
        spec = config.chains["obsps"]
        return OptimalBayesianSparsePSEstimator(
            burn_in=spec["burn_in"], kept=spec["kept"], random_state=seed
        )
    raise ValueError(f"unknown method {method!r}")


def run_replication(config: ScenarioConfig, rep: int) -> list[RepRecord]:
    """Generate one dataset and apply every configured method to it."""
    data = generate_dataset(config, rep)
    records = []
    for method in config.methods:
        estimator = _make_estimator(method, config, rep)
        try:
            estimator.fit_dataset(data)
        except SparsePSError as err:
            records.append(
                RepRecord(method=method, error=f"{type(err).__name__}: {err}")
            )
            continue
        report = estimator.report()
        records.append(
            RepRecord(
                method=method,
                theta_hat=report.theta_hat,
                se_hat=report.se_hat,
                ci_low=report.ci_low,
                ci_high=report.ci_high,
                support=None if method in ("ps", "tps") else report.selected_support,
                converged=True,
                diagnostics=report.diagnostics,
            )
        )
    return records


@dataclass
class MetricsRow:
    """Aggregated performance of one method in one scenario."""

    scenario: str
    method: str
    rbias: float | None
    se: float | None
    mean_se_hat: float | None
    cp: float | None
    tpr: float | None
    tnr: float | None
    n_converged: int
    mc_se_of_cp: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(
    records: list[RepRecord],
    theta0: float,
    z_true: np.ndarray | None = None,
    *,
    scenario: str = "",
    method: str = "",
) -> MetricsRow:
    """Relative bias, spread, coverage, and selection rates over replications.

    ``z_true`` is the full-length truth indicator (intercept included);
    selection rates are computed over non-intercept coordinates and are
    absent when ``z_true`` is None or no record carries a support.
    """
    ok = [r for r in records if r.converged]
    n_conv = len(ok)
    if n_conv == 0:
        return MetricsRow(scenario, method, None, None, None, None, None, None, 0, None)
    thetas = np.array([r.theta_hat for r in ok])
    se_hats = np.array([r.se_hat for r in ok])
    covered = np.array([r.ci_low <= theta0 <= r.ci_high for r in ok])

    rbias = float((thetas.mean() - theta0) / theta0)
    se = float(thetas.std(ddof=1)) if n_conv >= 2 else None
    mean_se_hat = float(se_hats.mean())
    cp = float(covered.mean())
    mc_se = float(np.sqrt(cp * (1.0 - cp) / n_conv))

    tpr = tnr = None
    if z_true is not None:
        z_true = np.asarray(z_true)
        nonzero = np.flatnonzero(z_true[1:] == 1) + 1
        zero = np.flatnonzero(z_true[1:] == 0) + 1
        tpr_vals, tnr_vals = [], []
        for r in ok:
            if r.support is None:
                continue
            sel = np.asarray(r.support)
            if nonzero.size:
                tpr_vals.append(float(np.mean(sel[nonzero] == 1)))
            if zero.size:
                tnr_vals.append(float(np.mean(sel[zero] == 0)))
        tpr = float(np.mean(tpr_vals)) if tpr_vals else None
        tnr = float(np.mean(tnr_vals)) if tnr_vals else None

    return MetricsRow(scenario, method, rbias, se, mean_se_hat, cp, tpr, tnr, n_conv, mc_se)


def _replication_task(args) -> list[RepRecord]:
    config, rep = args
    return run_replication(config, rep)


def run_monte_carlo(
    config: ScenarioConfig, workers: int | None = None
) -> tuple[list[MetricsRow], list[dict]]:
    """Run all replications and aggregate per-method metrics.

    Replications are independent tasks; with ``workers > 1`` they run in
    a process pool and are reduced in replication order, so the output
    is identical to a serial run.
    """
    workers = workers if workers is not None else (config.workers or 1)
    tasks = [(config, rep) for rep in range(config.B)]
    if workers > 1:
        chunk = max(1, config.B // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            all_records = list(pool.map(_replication_task, tasks, chunksize=chunk))
    else:
        all_records = [_replication_task(t) for t in tasks]

    theta0 = true_theta(config.model)
    z0 = true_response_support(config.d)
    u0 = true_working_support(config.model, config.d)
    truth = {"lasso": z0, "bsps": z0, "obsps": u0}

    rows = []
    for i, method in enumerate(config.methods):
        records = [reps[i] for reps in all_records]
        rows.append(
            compute_metrics(
                records,
                theta0,
                truth.get(method),
                scenario=config.scenario_id,
                method=method,
            )
        )
    details = [
        {"replication": rep, "methods": {rec.method: rec.to_dict() for rec in reps}}
        for rep, reps in enumerate(all_records)
    ]
    return rows, details


_CSV_COLUMNS = [
    "scenario",
    "method",
    "rbias",
    "se",
    "mean_se_hat",
    "cp",
    "tpr",
    "tnr",
    "n_converged",
    "mc_se_of_cp",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def metrics_to_csv(rows: list[MetricsRow], path) -> None:
    """Stable-ordered CSV, one method per line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for row in rows:
            rec = row.to_dict()
            writer.writerow([_fmt(rec[c]) for c in _CSV_COLUMNS])


def read_metrics_csv(path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _CSV_COLUMNS:
            raise ValueError(f"unexpected metrics columns: {reader.fieldnames}")
        for rec in reader:
            rows.append(
                MetricsRow(
                    scenario=rec["scenario"],
                    method=rec["method"],
                    rbias=float(rec["rbias"]) if rec["rbias"] else None,
                    se=float(rec["se"]) if rec["se"] else None,
                    mean_se_hat=float(rec["mean_se_hat"]) if rec["mean_se_hat"] else None,
                    cp=float(rec["cp"]) if rec["cp"] else None,
                    tpr=float(rec["tpr"]) if rec["tpr"] else None,
                    tnr=float(rec["tnr"]) if rec["tnr"] else None,
                    n_converged=int(rec["n_converged"]),
                    mc_se_of_cp=float(rec["mc_se_of_cp"]) if rec["mc_se_of_cp"] else None,
                )
            )
    return rows


def replications_to_json(config: ScenarioConfig, details: list[dict], path) -> None:
    """Per-replication detail bundle next to the metrics CSV."""
    payload = {"scenario": config.to_dict(), "replications": details}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")

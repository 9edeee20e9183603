"""Scikit-learn style estimators for the outcome mean under nonresponse.

Each estimator takes a covariate matrix ``X`` (no intercept column; one
is synthesized), outcomes ``y`` with missing entries, and optional 0/1
response indicators ``delta`` (inferred from finite ``y`` when omitted).
After ``fit`` the point estimate, standard error, interval, fitted
propensity coefficients, and selected support are available as trailing-
underscore attributes, and ``report()`` returns the serializable record.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import baseline, bsps, obsps
from .baseline import EstimateReport
from .data import Dataset
from .model import PriorConfig, propensity

__all__ = [
    "PropensityScoreEstimator",
    "LassoPropensityScoreEstimator",
    "BayesianSparsePSEstimator",
    "OptimalBayesianSparsePSEstimator",
]


class _MeanEstimatorBase(BaseEstimator):
    """Shared fitting plumbing; subclasses implement ``_fit_dataset``."""

    method = "ps"

    def fit(self, X, y, delta=None):
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y have inconsistent lengths")
        data = Dataset.from_arrays(X, y, delta)
        self.n_features_in_ = X.shape[1]
        return self.fit_dataset(data)

    def fit_dataset(self, data: Dataset):
        """Fit from a prebuilt :class:`Dataset` (intercept already present)."""
        if not hasattr(self, "n_features_in_"):
            self.n_features_in_ = data.d - 1
        report = self._fit_dataset(data)
        self.report_ = report
        self.theta_ = report.theta_hat
        self.se_ = report.se_hat
        self.ci_ = (report.ci_low, report.ci_high)
        self.support_ = report.selected_support
        self.converged_ = report.converged
        self.diagnostics_ = report.diagnostics
        return self

    def _fit_dataset(self, data: Dataset) -> EstimateReport:
        raise NotImplementedError

    def report(self) -> EstimateReport:
        check_is_fitted(self, "report_")
        return self.report_

    def predict_propensity(self, X) -> np.ndarray:
        """Estimated response probabilities for new covariate rows."""
        check_is_fitted(self, "phi_")
        X = check_array(X, dtype=float)
        design = np.hstack([np.ones((X.shape[0], 1)), X])
        return propensity(design, self.phi_)

    def _support_mask(self, d: int) -> np.ndarray | None:
        """Translate user covariate indices into a design-column mask."""
        support = getattr(self, "support", None)
        if support is None:
            return None
        mask = np.zeros(d, dtype=bool)
        mask[0] = True
        idx = np.asarray(support, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= d - 1):
            raise ValueError("support indices out of range")
        mask[idx + 1] = True
        return mask


class PropensityScoreEstimator(_MeanEstimatorBase):
    """Weighted-mean estimator with a maximum-likelihood response model.

    Parameters
    ----------
    support : sequence of int or None
        Covariate indices (0-based, intercept excluded) to keep in the
        response model; ``None`` fits the full model.
    level : float
        Confidence level for the normal-theory interval.
    """

    method = "ps"

    def __init__(self, support=None, level: float = 0.95):
        self.support = support
        self.level = level

    def _fit_dataset(self, data: Dataset) -> EstimateReport:
        mask = self._support_mask(data.d)
        phi, info = baseline.fit_propensity_mle(data, mask, return_info=True)
        theta = baseline.ps_point_estimate(data, phi)
        variance = baseline.ps_variance_taylor(data, phi, theta, support=mask)
        lo, hi = baseline.wald_interval(theta, variance, self.level)
        self.phi_ = phi
        used = mask if mask is not None else np.ones(data.d, dtype=bool)
        return EstimateReport(
            theta_hat=theta,
            se_hat=float(np.sqrt(variance)),
            ci_low=lo,
            ci_high=hi,
            method=self.method,
            selected_support=[int(v) for v in used],
            converged=True,
            diagnostics={
                "newton_iterations": info["iterations"],
                "clamp_events": info["clamp_events"],
            },
        )


class LassoPropensityScoreEstimator(_MeanEstimatorBase):
    """Weighted-mean estimator with an L1-selected response model.

    The penalty is chosen by K-fold cross-validation on held-out
    deviance; the unpenalized MLE is refit on the selected support
    before the point estimate and linearization variance are formed.
    """

    method = "lasso"

    def __init__(
        self,
        lambda_grid=None,
        n_lambdas: int = 50,
        lambda_min_ratio: float = 1e-3,
        folds: int = 5,
        level: float = 0.95,
        random_state: int = 0,
    ):
        self.lambda_grid = lambda_grid
        self.n_lambdas = n_lambdas
        self.lambda_min_ratio = lambda_min_ratio
        self.folds = folds
        self.level = level
        self.random_state = random_state

    def _fit_dataset(self, data: Dataset) -> EstimateReport:
        grid = self.lambda_grid
        if grid is None:
            grid = baseline.default_lambda_grid(data, self.n_lambdas, self.lambda_min_ratio)
        _, z, info = baseline.fit_lasso_logistic(
            data, grid, self.folds, seed=self.random_state, return_info=True
        )
        mask = z.astype(bool)
        phi, fit_info = baseline.fit_propensity_mle(data, mask, return_info=True)
        theta = baseline.ps_point_estimate(data, phi)
        variance = baseline.ps_variance_taylor(data, phi, theta, support=mask)
        lo, hi = baseline.wald_interval(theta, variance, self.level)
        self.phi_ = phi
        return EstimateReport(
            theta_hat=theta,
            se_hat=float(np.sqrt(variance)),
            ci_low=lo,
            ci_high=hi,
            method=self.method,
            selected_support=[int(v) for v in z],
            converged=True,
            diagnostics={
                "lambda": info["lambda"],
                "intercept_only": info["intercept_only"],
                "newton_iterations": fit_info["iterations"],
                "clamp_events": fit_info["clamp_events"],
            },
        )


class BayesianSparsePSEstimator(_MeanEstimatorBase):
    """Outcome-mean posterior under a spike-and-slab response model.

    Runs the model / coefficient / mean Gibbs chain and summarizes the
    kept draws: posterior mean and SD, equal-tailed quantile interval,
    and the median-probability selected support.
    """

    method = "bsps"

    def __init__(
        self,
        nu0: float = 1e-4,
        nu1: float = 1e4,
        w: float = 0.5,
        burn_in: int = 2000,
        kept: int = 2000,
        level: float = 0.95,
        random_state: int = 0,
    ):
        self.nu0 = nu0
        self.nu1 = nu1
        self.w = w
        self.burn_in = burn_in
        self.kept = kept
        self.level = level
        self.random_state = random_state

    def _priors(self) -> PriorConfig:
        return PriorConfig(nu0=self.nu0, nu1=self.nu1, w=self.w)

    def _fit_dataset(self, data: Dataset) -> EstimateReport:
        sample = bsps.run_bsps_chain(
            data, self._priors(), self.burn_in, self.kept, seed=self.random_state
        )
        self.posterior_ = sample
        self.phi_ = np.mean([s.phi for s in sample.draws], axis=0)
        return bsps.summarize_posterior(sample, self.level, method=self.method)


class OptimalBayesianSparsePSEstimator(_MeanEstimatorBase):
    """Efficiency-augmented variant with a working outcome model.

    In addition to the response-model sweeps, explores which covariates
    the outcome loads on and calibrates the weighted mean on that
    augmented support through an over-identified estimating system.  The
    reported support is the working-model one.
    """

    method = "obsps"

    def __init__(
        self,
        nu0: float = 1e-4,
        nu1: float = 1e4,
        w: float = 0.5,
        xi: float = 0.5,
        gamma0: float = 1e-4,
        gamma1: float = 1e4,
        c1: float = 1e-7,
        c2: float = 1e-7,
        inner_steps: int = 20,
        burn_in: int = 2000,
        kept: int = 2000,
        level: float = 0.95,
        random_state: int = 0,
    ):
        self.nu0 = nu0
        self.nu1 = nu1
        self.w = w
        self.xi = xi
        self.gamma0 = gamma0
        self.gamma1 = gamma1
        self.c1 = c1
        self.c2 = c2
        self.inner_steps = inner_steps
        self.burn_in = burn_in
        self.kept = kept
        self.level = level
        self.random_state = random_state

    def _priors(self) -> PriorConfig:
        return PriorConfig(
            nu0=self.nu0,
            nu1=self.nu1,
            w=self.w,
            xi=self.xi,
            gamma0=self.gamma0,
            gamma1=self.gamma1,
            c1=self.c1,
            c2=self.c2,
        )

    def _fit_dataset(self, data: Dataset) -> EstimateReport:
        sample = obsps.run_obsps_chain(
            data,
            self._priors(),
            self.burn_in,
            self.kept,
            seed=self.random_state,
            inner_steps=self.inner_steps,
        )
        self.posterior_ = sample
        self.phi_ = np.mean([s.phi for s in sample.draws], axis=0)
        return bsps.summarize_posterior(
            sample, self.level, method=self.method, support_from="u"
        )

"""Classical propensity-score estimation.

Full-model (or fixed-support) maximum likelihood for the response
probabilities, the inverse-probability-weighted point estimate of the
outcome mean, its Taylor-linearization variance, and an L1-penalized
logistic fit with K-fold cross-validation as the sparse frequentist
baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from .data import Dataset
from .exceptions import NoConvergence, NoRespondents, SingularInformation
from .model import clamp_events, link_logistic, log_likelihood, propensity, score
from .optim import newton_maximize

__all__ = [
    "EstimateReport",
    "fit_propensity_mle",
    "ps_point_estimate",
    "ps_variance_taylor",
    "wald_interval",
    "default_lambda_grid",
    "fit_lasso_logistic",
]

COND_LIMIT = 1e12


@dataclass
class EstimateReport:
    """Point estimate of the outcome mean with its uncertainty summary."""

    theta_hat: float
    se_hat: float
    ci_low: float
    ci_high: float
    method: str
    selected_support: list[int] | None = None
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.converged:
            if not np.isfinite(self.se_hat):
                raise ValueError("se_hat must be finite when converged")
            if not (self.ci_low <= self.theta_hat <= self.ci_high):
                raise ValueError("need ci_low <= theta_hat <= ci_high when converged")

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat,
            "se_hat": self.se_hat,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "method": self.method,
            "selected_support": self.selected_support,
            "converged": self.converged,
            "diagnostics": self.diagnostics,
        }


def _support_mask(d: int, support) -> np.ndarray:
    if support is None:
        return np.ones(d, dtype=bool)
    mask = np.asarray(support).astype(bool)
    if mask.shape != (d,):
        raise ValueError(f"support must have length {d}, got shape {mask.shape}")
    if not mask[0]:
        raise ValueError("support must include column 0 (intercept)")
    return mask


def _restricted(data: Dataset, mask: np.ndarray) -> Dataset:
    # Restricted designs share the same respondents; only columns change.
    return Dataset(x=data.x[:, mask], y=data.y, delta=data.delta)


def fit_propensity_mle(
    data: Dataset,
    support=None,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    return_info: bool = False,
):
    """Maximum-likelihood response-model coefficients on a given support.

    Coefficients off the support are returned as exact zeros.  Solved by
    damped Newton-Raphson with step halving; raises
    :class:`NoConvergence` after ``max_iter`` iterations and
    :class:`SingularInformation` when the restricted information matrix
    is numerically singular (separation or collinearity).
    """
    mask = _support_mask(data.d, support)
    sub = _restricted(data, mask)

    rate = float(np.clip(data.delta.mean(), 1.0 / (data.n + 1), data.n / (data.n + 1)))
    start = np.zeros(sub.d)
    start[0] = np.log(rate / (1.0 - rate))

    def evaluate(phi):
        pi = propensity(sub.x, phi)
        grad = (sub.delta - pi) @ sub.x
        w = pi * (1.0 - pi)
        curve = (sub.x * w[:, None]).T @ sub.x
        return log_likelihood(sub, phi), grad, curve

    phi_sub, info = newton_maximize(
        start,
        evaluate,
        lambda phi: log_likelihood(sub, phi),
        tol=tol,
        max_iter=max_iter,
        cond_limit=COND_LIMIT,
        what="propensity MLE",
    )
    phi = np.zeros(data.d)
    phi[mask] = phi_sub
    if return_info:
        info["clamp_events"] = clamp_events(sub.x, phi_sub)
        return phi, info
    return phi


def _ipw_ratio(weights: np.ndarray, y: np.ndarray, delta: np.ndarray) -> float:
    """Ratio estimator ``sum(w y) / sum(w)`` over respondents.

    Invariant to rescaling all weights by a positive constant.
    """
    y_filled = np.where(delta == 1, y, 0.0)
    total = float(weights.sum())
    if total <= 0:
        raise NoRespondents("all inverse-probability weights are zero")
    return float((weights * y_filled).sum() / total)


def ps_point_estimate(data: Dataset, phi: np.ndarray) -> float:
    """Inverse-probability-weighted estimate of the outcome mean."""
    if data.n_respondents == 0:
        raise NoRespondents("no observed outcomes")
    pi = propensity(data.x, phi)
    weights = data.delta / pi
    return _ipw_ratio(weights, data.y, data.delta)


def ps_variance_taylor(data: Dataset, phi: np.ndarray, theta: float, support=None) -> float:
    """Linearization variance of the weighted mean with estimated weights.

    Sandwich form with plug-in moments; the propensity-model correction
    term is estimated from respondent-weighted moments so it is
    computable from observed data.  ``support`` defaults to the nonzero
    pattern of ``phi`` (plus the intercept) and must match the support
    the coefficients were fitted on.
    """
    if support is None:
        support = phi != 0
        support = np.asarray(support, dtype=bool)
        support[0] = True
    mask = _support_mask(data.d, support)
    xs = data.x[:, mask]
    n = data.n

    pi = propensity(data.x, phi)
    w = data.delta / pi
    y_filled = np.where(data.delta == 1, data.y, 0.0)
    resid = y_filled - theta
    u = w * resid

    neg_a = (xs * (pi * (1.0 - pi))[:, None]).T @ xs / n  # -A, positive definite
    c_vec = -((w * (1.0 - pi) * resid) @ xs) / n
    d_hat = -w.sum() / n

    if np.linalg.cond(neg_a) > COND_LIMIT:
        raise SingularInformation("information matrix condition number exceeds 1e12")
    factor = cho_factor(neg_a, lower=True, check_finite=False)
    correction = -float(c_vec @ cho_solve(factor, c_vec, check_finite=False))
    mid = float(u @ u) / n + correction
    return max(mid / (d_hat * d_hat) / n, 0.0)


def wald_interval(theta: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    """Symmetric normal-theory confidence interval."""
    half = norm.ppf(0.5 + level / 2.0) * np.sqrt(max(variance, 0.0))
    return theta - half, theta + half


# ---------------------------------------------------------------------------
# L1-penalized logistic regression (coordinate descent, CV over a grid)
# ---------------------------------------------------------------------------

# Weight floor inside the quadratic majorization, as in standard
# coordinate-descent GLM solvers.
_IRLS_WEIGHT_FLOOR = 1e-6


def default_lambda_grid(data: Dataset, n_lambdas: int = 50, min_ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced penalty grid from the all-zero threshold downward.

    The top value is the smallest penalty at which every penalized
    coefficient is zero, read off the score at the intercept-only fit.
    """
    rate = float(np.clip(data.delta.mean(), 1.0 / (data.n + 1), data.n / (data.n + 1)))
    phi0 = np.zeros(data.d)
    phi0[0] = np.log(rate / (1.0 - rate))
    s = score(data, phi0)
    lam_max = float(np.max(np.abs(s[1:]))) if data.d > 1 else 1.0
    lam_max = max(lam_max, 1e-10)
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambdas)


def _soft(a: float, threshold: float) -> float:
    if a > threshold:
        return a - threshold
    if a < -threshold:
        return a + threshold
    return 0.0


def _cd_fit(x, delta, lam, phi0, tol, sweep_budget):
    """Penalized logistic fit at one penalty value.

    Outer quadratic majorization, inner cyclic coordinate descent with
    soft thresholding; the intercept (column 0) is never penalized.
    Returns the solution and the number of coordinate sweeps consumed.
    """
    n, d = x.shape
    phi = phi0.copy()
    sweeps = 0
    for _ in range(100):  # majorization rounds
        eta = x @ phi
        pi = link_logistic(eta)
        w = np.maximum(pi * (1.0 - pi), _IRLS_WEIGHT_FLOOR)
        zw = eta + (delta - pi) / w  # working response
        wx = x * w[:, None]
        denom = np.einsum("ij,ij->j", wx, x)  # sum_i w_i x_ij^2
        r = zw - eta  # residual of working response at current phi

        phi_round_start = phi.copy()
        while True:
            max_move = 0.0
            for j in range(d):
                xj = x[:, j]
                wxj = wx[:, j]
                old = phi[j]
                a = float(wxj @ r) + denom[j] * old
                new = a / denom[j] if j == 0 else _soft(a, lam) / denom[j]
                if new != old:
                    r += xj * (old - new)
                    phi[j] = new
                    max_move = max(max_move, abs(new - old))
            sweeps += 1
            if sweeps >= sweep_budget:
                raise NoConvergence(f"lasso: sweep budget exhausted at lambda={lam:.4g}")
            if max_move < tol:
                break
        if float(np.max(np.abs(phi - phi_round_start))) < 10 * tol:
            break
    return phi, sweeps


def _lasso_path(x, delta, grid, tol, sweep_budget):
    """Warm-started solutions along a decreasing penalty grid."""
    n, d = x.shape
    rate = float(np.clip(delta.mean(), 1.0 / (n + 1), n / (n + 1)))
    phi = np.zeros(d)
    phi[0] = np.log(rate / (1.0 - rate))
    path = []
    for lam in grid:
        phi, _ = _cd_fit(x, delta, lam, phi, tol, sweep_budget)
        path.append(phi.copy())
    return path


def _fold_assignment(delta: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Deterministic stratified-by-delta round-robin fold labels."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    labels = np.empty(delta.shape[0], dtype=int)
    for value in (0, 1):
        idx = np.flatnonzero(delta == value)
        rng.shuffle(idx)
        labels[idx] = np.arange(idx.size) % folds
    return labels


def fit_lasso_logistic(
    data: Dataset,
    lambda_grid=None,
    folds: int = 5,
    *,
    seed: int = 0,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
    return_info: bool = False,
):
    """L1-penalized response-model fit with the penalty chosen by CV.

    Minimizes the negative log-likelihood plus ``lam * sum_{j>=1}
    |phi_j|`` (intercept unpenalized) along the grid, scores each
    penalty by mean held-out deviance over stratified folds, and returns
    the coefficients and the selected-support indicator at the winning
    penalty.  Downstream estimates should refit the unpenalized MLE on
    that support.
    """
    if folds < 2:
        raise ValueError("need folds >= 2")
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(data)
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda_grid must be nonempty")
    if grid.size > 1 and not np.all(np.diff(grid) < 0):
        raise ValueError("lambda_grid must be strictly decreasing")

    labels = _fold_assignment(data.delta, folds, seed)
    deviance = np.zeros((folds, grid.size))
    for k in range(folds):
        train = labels != k
        held = ~train
        path = _lasso_path(data.x[train], data.delta[train], grid, tol, max_sweeps)
        x_held = data.x[held]
        delta_held = data.delta[held]
        for i, phi in enumerate(path):
            pi = link_logistic(x_held @ phi)
            ll = float(np.sum(delta_held * np.log(pi) + (1 - delta_held) * np.log1p(-pi)))
            deviance[k, i] = -2.0 * ll

    mean_dev = deviance.mean(axis=0)
    best = int(np.argmin(mean_dev))  # ties resolve to the sparser (larger) penalty
    full_path = _lasso_path(data.x, data.delta, grid, tol, max_sweeps)
    phi = full_path[best]
    z = (phi != 0).astype(np.int8)
    z[0] = 1
    if return_info:
        info = {
            "lambda": float(grid[best]),
            "lambda_index": best,
            "mean_heldout_deviance": mean_dev,
            "path": full_path,
            "intercept_only": int(z.sum()) == 1,
        }
        return phi, z, info
    return phi, z

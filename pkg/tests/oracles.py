"""Independent oracles used to freeze expected values in the tests.

Everything here deliberately avoids the library's own code paths:
finite differences instead of analytic gradients, grid refinement
instead of Newton, direct per-row accumulation instead of vectorized
likelihoods, and a separately coded conjugate sampler.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def logistic_highprec(eta: float) -> float:
    """Logistic CDF via mpmath at 50 digits; no clamping."""
    import mpmath

    with mpmath.workdps(50):
        return float(1 / (1 + mpmath.exp(-mpmath.mpf(eta))))


def loglik_rowwise(x, y_unused, delta, phi, floor=1e-12) -> float:
    """Per-row accumulation of the Bernoulli log-likelihood."""
    total = 0.0
    for i in range(x.shape[0]):
        eta = float(np.dot(x[i], phi))
        p = 1.0 / (1.0 + math.exp(-eta)) if eta >= 0 else math.exp(eta) / (1.0 + math.exp(eta))
        p = min(max(p, floor), 1.0 - floor)
        total += math.log(p) if delta[i] == 1 else math.log(1.0 - p)
    return total


def fd_gradient(f, x, step=1e-5) -> np.ndarray:
    """Central finite-difference gradient."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for j in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[j] += step
        lo[j] -= step
        grad[j] = (f(hi) - f(lo)) / (2.0 * step)
    return grad


def fd_hessian(f, x, step=1e-4) -> np.ndarray:
    """Central finite-difference Hessian (via gradient differences)."""
    x = np.asarray(x, dtype=float)
    d = x.size
    hess = np.empty((d, d))
    for j in range(d):
        hi = x.copy()
        lo = x.copy()
        hi[j] += step
        lo[j] -= step
        ghi = fd_gradient(f, hi, step)
        glo = fd_gradient(f, lo, step)
        hess[:, j] = (ghi - glo) / (2.0 * step)
    return (hess + hess.T) / 2.0


def grid_maximize(f, d, lo=-4.0, hi=4.0, rounds=4, points=13) -> np.ndarray:
    """Coordinate-box grid refinement: derivative-free maximizer.

    Each round evaluates a full tensor grid of ``points`` per dimension
    inside the current box, then shrinks the box around the best point.
    Final spacing is (hi-lo) * (2/(points-1))^rounds per coordinate.
    """
    center = np.zeros(d)
    half = (hi - lo) / 2.0
    best = None
    for _ in range(rounds):
        axes = [np.linspace(c - half, c + half, points) for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=1)
        values = np.array([f(g) for g in grid])
        best = grid[int(np.argmax(values))]
        center = best
        half *= 2.0 / (points - 1)
    return best


def inclusion_probability_direct(phi_j: float, w: float, nu0: float, nu1: float) -> float:
    """Slab-vs-spike Bernoulli probability via mpmath densities."""
    import mpmath

    with mpmath.workdps(60):
        phi_j = mpmath.mpf(phi_j)

        def dens(var):
            return mpmath.exp(-phi_j**2 / (2 * var)) / mpmath.sqrt(2 * mpmath.pi * var)

        num = mpmath.mpf(w) * dens(mpmath.mpf(nu1))
        den = num + (1 - mpmath.mpf(w)) * dens(mpmath.mpf(nu0))
        return float(num / den)


def nig_gibbs_reference(x_obs, y_obs, variances, c1, c2, n_draws, seed):
    """Conjugate Gaussian linear model Gibbs sampler, independently coded.

    Uses scipy multivariate-normal and inverse-gamma sampling on the
    standard normal-inverse-gamma conditionals with a fixed diagonal
    prior covariance ``variances`` for the coefficients.
    """
    rng = np.random.default_rng(seed)
    n, d = x_obs.shape
    xtx = x_obs.T @ x_obs
    xty = x_obs.T @ y_obs
    prior_prec = np.diag(1.0 / np.asarray(variances, dtype=float))
    sigma2 = float(np.var(y_obs))
    betas = np.empty((n_draws, d))
    sigmas = np.empty(n_draws)
    for k in range(n_draws):
        cov = np.linalg.inv(prior_prec + xtx / sigma2)
        mean = cov @ (xty / sigma2)
        beta = stats.multivariate_normal.rvs(mean=mean, cov=cov, random_state=rng)
        beta = np.atleast_1d(beta)
        resid = y_obs - x_obs @ beta
        shape = c1 + n / 2.0
        scale = c2 + 0.5 * float(resid @ resid)
        sigma2 = float(stats.invgamma.rvs(a=shape, scale=scale, random_state=rng))
        betas[k] = beta
        sigmas[k] = sigma2
    return betas, sigmas


def aggregate_reference(records, theta0):
    """Spreadsheet-style aggregation of (theta, se, lo, hi) tuples."""
    thetas = [r[0] for r in records]
    ses = [r[1] for r in records]
    mean_theta = sum(thetas) / len(thetas)
    rbias = (mean_theta - theta0) / theta0
    var = sum((t - mean_theta) ** 2 for t in thetas) / (len(thetas) - 1)
    cover = sum(1 for r in records if r[2] <= theta0 <= r[3]) / len(records)
    return {
        "rbias": rbias,
        "se": math.sqrt(var),
        "mean_se_hat": sum(ses) / len(ses),
        "cp": cover,
    }

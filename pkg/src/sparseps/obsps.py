"""Efficiency-augmented sparse propensity estimation.

On top of the sparse response-model sweeps, a linear working model for
the outcome is explored with its own spike-and-slab indicators; the
union of response-model and outcome-correlated covariates defines an
over-identified estimating system (weighted-mean block plus score- and
weight-calibration blocks).  The outcome mean is then drawn from the
Gaussian approximation to the implied estimating-equation posterior,
centered at the two-step GMM minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.special import expit

from .baseline import _ipw_ratio, fit_propensity_mle, ps_point_estimate
from .bsps import (
    OptChainState,
    PosteriorSample,
    _chain_rng,
    _gauss_logpdf,
    _gaussian_from_precision_chol,
    _ModeCache,
    draw_model_step,
    draw_theta_step,
)
from .data import Dataset
from .exceptions import (
    ChainFailure,
    NoConvergence,
    NoRespondents,
    SingularInformation,
    SingularWeight,
)
from .model import PriorConfig, link_logistic, propensity

__all__ = [
    "WorkingModelState",
    "OptSystem",
    "GmmSolution",
    "working_inclusion_probability",
    "draw_u_step",
    "draw_beta_sigma",
    "build_u_opt",
    "gmm_solve",
    "draw_zeta",
    "run_obsps_chain",
]

_COND_LIMIT = 1e12
_RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class WorkingModelState:
    """Working outcome model block: indicators, coefficients, error variance."""

    u: np.ndarray
    beta: np.ndarray
    sigma2_e: float

    def __post_init__(self):
        if self.sigma2_e <= 0:
            raise ValueError("sigma2_e must be positive")


def working_inclusion_probability(beta: np.ndarray, z: np.ndarray, priors: PriorConfig) -> np.ndarray:
    """Inclusion probabilities for the working model given coefficients.

    Coordinates already in the response model are included with
    probability 1; the rest get the slab/spike density ratio at the
    current outcome coefficients, in log space.
    """
    beta = np.asarray(beta, dtype=float)
    d = beta.shape[0]
    xi = priors.xi_vector(d)
    log_slab = np.log(xi) + _gauss_logpdf(beta, priors.gamma1)
    log_spike = np.log1p(-xi) + _gauss_logpdf(beta, priors.gamma0)
    prob = np.where(np.asarray(z) == 1, 1.0, expit(log_slab - log_spike))
    prob[0] = 1.0
    return prob


def _draw_u(beta, z, priors, rng) -> np.ndarray:
    prob = working_inclusion_probability(beta, z, priors)
    u = (rng.random(prob.shape[0]) < prob).astype(np.int8)
    u[0] = 1
    return u


def draw_u_step(
    state: WorkingModelState, z: np.ndarray, priors: PriorConfig, rng: np.random.Generator
) -> np.ndarray:
    """Draw working-model indicators; coordinates with z=1 stay included."""
    return _draw_u(state.beta, z, priors, rng)


def _conjugate_beta_sigma(x_obs, y_obs, s_xx, s_xy, u, sigma2_prev, priors, rng):
    """One conjugate draw of (beta, sigma2) given indicators, respondents only."""
    d = s_xx.shape[0]
    vinv = 1.0 / priors.slab_spike_variances(u, slab=priors.gamma1, spike=priors.gamma0)
    a = s_xx / sigma2_prev
    a[np.diag_indices(d)] += vinv
    factor = cho_factor(a, lower=True, check_finite=False)
    mu = cho_solve(factor, s_xy / sigma2_prev, check_finite=False)
    # A = L L^T, so L^-T N(0, I) has covariance A^-1.
    noise = solve_triangular(
        factor[0], rng.standard_normal(d), lower=True, trans="T", check_finite=False
    )
    beta = mu + noise
    resid = y_obs - x_obs @ beta
    r = y_obs.shape[0]
    c1_star = priors.c1 + r / 2.0
    c2_star = priors.c2 + 0.5 * float(resid @ resid)
    sigma2 = c2_star / rng.gamma(shape=c1_star, scale=1.0)
    return beta, float(sigma2)


def draw_beta_sigma(
    data: Dataset,
    u: np.ndarray,
    sigma2_prev: float,
    priors: PriorConfig,
    rng: np.random.Generator,
) -> WorkingModelState:
    """Conjugate Gaussian / inverse-gamma draw for the working outcome model.

    The coefficient draw is multivariate normal with precision
    ``V_u^-1 + sigma^-2 sum_i delta_i x_i x_i^T``; the error variance is
    then inverse gamma with shape ``c1 + r/2`` (r = respondent count)
    and scale ``c2 + 0.5 sum_i delta_i (y_i - x_i' beta)^2``.
    """
    obs = data.delta == 1
    if not obs.any():
        raise NoRespondents("working model needs at least one respondent")
    x_obs = data.x[obs]
    y_obs = data.y[obs]
    beta, sigma2 = _conjugate_beta_sigma(
        x_obs, y_obs, x_obs.T @ x_obs, x_obs.T @ y_obs, u, sigma2_prev, priors, rng
    )
    return WorkingModelState(u=np.asarray(u, dtype=np.int8), beta=beta, sigma2_e=sigma2)


# ---------------------------------------------------------------------------
# Over-identified estimating system and its GMM solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptSystem:
    """Stacked estimating system on the augmented support.

    Parameter vector ``zeta = (phi_active, theta)`` of length q+1 where q
    counts the active columns (intercept included).  The blocks are the
    weighted-mean equation (scalar), the score-calibration block, and,
    unless ``calibration=False``, the weight-calibration block, giving
    1 + 2q equations; all are averages over units.
    """

    u_star: np.ndarray
    active: np.ndarray
    calibration: bool
    xs: np.ndarray
    y_filled: np.ndarray
    delta: np.ndarray
    n: int

    @property
    def q(self) -> int:
        return int(self.active.shape[0])

    @property
    def n_equations(self) -> int:
        return 1 + (2 if self.calibration else 1) * self.q

    def _parts(self, zeta):
        phi_a = zeta[: self.q]
        theta = zeta[self.q]
        pi = link_logistic(self.xs @ phi_a)
        w = self.delta / pi
        return pi, w, theta

    def equations(self, zeta: np.ndarray) -> np.ndarray:
        pi, w, theta = self._parts(zeta)
        b1 = float(np.mean(w * (self.y_filled - theta)))
        b2 = (self.delta - pi) @ self.xs / self.n
        if not self.calibration:
            return np.concatenate([[b1], b2])
        b3 = (w - 1.0) @ self.xs / self.n
        return np.concatenate([[b1], b2, b3])

    def per_unit(self, zeta: np.ndarray) -> np.ndarray:
        """Per-unit stacked residuals g_i, shape (n, n_equations)."""
        pi, w, theta = self._parts(zeta)
        g1 = (w * (self.y_filled - theta))[:, None]
        g2 = (self.delta - pi)[:, None] * self.xs
        if not self.calibration:
            return np.hstack([g1, g2])
        g3 = (w - 1.0)[:, None] * self.xs
        return np.hstack([g1, g2, g3])

    def jacobian(self, zeta: np.ndarray) -> np.ndarray:
        pi, w, theta = self._parts(zeta)
        q, n = self.q, self.n
        resid = self.y_filled - theta
        wq = w * (1.0 - pi)  # delta (1-pi) / pi
        jac = np.zeros((self.n_equations, q + 1))
        jac[0, :q] = -(wq * resid) @ self.xs / n
        jac[0, q] = -float(w.mean())
        jac[1 : 1 + q, :q] = -(self.xs * (pi * (1.0 - pi))[:, None]).T @ self.xs / n
        if self.calibration:
            jac[1 + q :, :q] = -(self.xs * wq[:, None]).T @ self.xs / n
        return jac


def build_u_opt(data: Dataset, u_star: np.ndarray, calibration: bool = True) -> OptSystem:
    """Assemble the estimating system for a given augmented support."""
    u_star = np.asarray(u_star, dtype=np.int8)
    if u_star.shape != (data.d,):
        raise ValueError(f"u_star must have length {data.d}")
    if u_star[0] != 1:
        raise ValueError("u_star must include the intercept")
    active = np.flatnonzero(u_star == 1)
    return OptSystem(
        u_star=u_star,
        active=active,
        calibration=calibration,
        xs=data.x[:, active],
        y_filled=np.where(data.delta == 1, data.y, 0.0),
        delta=data.delta.astype(float),
        n=data.n,
    )


@dataclass
class GmmSolution:
    """Two-step GMM minimizer with its moment covariance and Jacobian."""

    zeta: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self) -> float:
        return float(self.zeta[-1])

    def zeta_covariance(self, n: int) -> np.ndarray:
        """Sampling covariance ``n^-1 (Gamma' Sigma^-1 Gamma)^-1``."""
        factor = cho_factor(self.sigma, lower=True, check_finite=False)
        bread = self.gamma.T @ cho_solve(factor, self.gamma, check_finite=False)
        cov = np.linalg.inv(bread) / n
        return (cov + cov.T) / 2.0


def _weight_factor(sigma: np.ndarray, diagnostics: dict):
    """Cholesky factor of the moment covariance, ridged if ill-conditioned."""
    if not np.all(np.isfinite(sigma)):
        raise SingularWeight("moment covariance contains non-finite entries")
    if np.linalg.cond(sigma) > _COND_LIMIT:
        sigma = sigma + _RIDGE_SCALE * np.trace(sigma) * np.eye(sigma.shape[0])
        diagnostics["weight_ridge_events"] = diagnostics.get("weight_ridge_events", 0) + 1
    try:
        return cho_factor(sigma, lower=True, check_finite=False), sigma
    except LinAlgError as err:
        raise SingularWeight("moment covariance not positive definite") from err


def _gauss_newton(system: OptSystem, zeta0, w_factor, tol, max_iter, diagnostics):
    zeta = np.asarray(zeta0, dtype=float).copy()
    u_vec = system.equations(zeta)
    wu = cho_solve(w_factor, u_vec, check_finite=False)
    quad = float(u_vec @ wu)
    for iteration in range(max_iter):
        jac = system.jacobian(zeta)
        grad = 2.0 * jac.T @ wu
        if float(np.max(np.abs(grad))) < tol:
            diagnostics["gn_iterations"] = diagnostics.get("gn_iterations", 0) + iteration
            return zeta
        wj = cho_solve(w_factor, jac, check_finite=False)
        normal_matrix = jac.T @ wj
        try:
            step = -np.linalg.solve(normal_matrix, jac.T @ wu)
        except np.linalg.LinAlgError as err:
            raise SingularInformation("GMM normal equations singular") from err
        t = 1.0
        slack = 1e-12 * (1.0 + abs(quad))
        for _ in range(31):
            cand = zeta + t * step
            u_cand = system.equations(cand)
            wu_cand = cho_solve(w_factor, u_cand, check_finite=False)
            quad_cand = float(u_cand @ wu_cand)
            if np.isfinite(quad_cand) and quad_cand <= quad + slack:
                break
            t *= 0.5
        else:
            raise NoConvergence("GMM: no descent step found")
        zeta, u_vec, wu, quad = cand, u_cand, wu_cand, quad_cand
    jac = system.jacobian(zeta)
    if float(np.max(np.abs(2.0 * jac.T @ wu))) < tol:
        diagnostics["gn_iterations"] = diagnostics.get("gn_iterations", 0) + max_iter
        return zeta
    # Gauss-Newton converges only linearly when the over-identification
    # residual is large (dense supports); polish with quasi-Newton on the
    # same quadratic form before giving up.
    zeta = _bfgs_rescue(system, zeta, w_factor, tol, diagnostics)
    if zeta is not None:
        return zeta
    raise NoConvergence(f"GMM did not converge in {max_iter} Gauss-Newton iterations")


def _bfgs_rescue(system, zeta0, w_factor, tol, diagnostics):
    from scipy.optimize import minimize

    def q_and_grad(zeta):
        u_vec = system.equations(zeta)
        wu = cho_solve(w_factor, u_vec, check_finite=False)
        return float(u_vec @ wu), 2.0 * (system.jacobian(zeta).T @ wu)

    result = minimize(
        q_and_grad, zeta0, jac=True, method="BFGS",
        options={"gtol": 0.5 * tol, "maxiter": 500},
    )
    if float(np.max(np.abs(result.jac))) < tol:
        diagnostics["bfgs_rescues"] = diagnostics.get("bfgs_rescues", 0) + 1
        return np.asarray(result.x, dtype=float)
    return None


def _moment_cov(system: OptSystem, zeta) -> np.ndarray:
    g = system.per_unit(zeta)
    sigma = g.T @ g / system.n
    return (sigma + sigma.T) / 2.0


def default_zeta_init(system: OptSystem, data: Dataset) -> np.ndarray:
    """Plain weighted fit on the active support as the GMM starting point."""
    mask = np.zeros(data.d, dtype=bool)
    mask[system.active] = True
    phi_full = fit_propensity_mle(data, support=mask)
    theta0 = ps_point_estimate(data, phi_full)
    return np.concatenate([phi_full[system.active], [theta0]])


def gmm_solve(
    system: OptSystem,
    data: Dataset,
    init: np.ndarray | None = None,
    *,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> GmmSolution:
    """Two-step GMM for the over-identified system.

    Stage one minimizes the quadratic form weighted by the inverse moment
    covariance at the starting point; stage two reweights at the stage-one
    solution and re-minimizes.  Returns the minimizer together with the
    per-unit moment covariance and average Jacobian evaluated there.
    """
    if init is None:
        init = default_zeta_init(system, data)
    init = np.asarray(init, dtype=float)
    if init.shape != (system.q + 1,):
        raise ValueError(f"init must have length {system.q + 1}")
    diagnostics: dict = {}
    zeta = init
    for _ in range(2):
        factor, _sigma = _weight_factor(_moment_cov(system, zeta), diagnostics)
        zeta = _gauss_newton(system, zeta, factor, tol, max_iter, diagnostics)
    sigma_opt = _moment_cov(system, zeta)
    gamma = system.jacobian(zeta)
    return GmmSolution(zeta=zeta, sigma=sigma_opt, gamma=gamma, diagnostics=diagnostics)


def _zeta_precision_chol(sol: GmmSolution, n: int) -> np.ndarray:
    """Lower Cholesky factor of the precision ``n Gamma' Sigma^-1 Gamma``.

    Draws via a triangular solve against this factor have exactly the
    GMM sampling covariance without forming the explicit inverse.
    """
    try:
        factor = cho_factor(sol.sigma, lower=True, check_finite=False)
        bread = sol.gamma.T @ cho_solve(factor, sol.gamma, check_finite=False)
        bread = (bread + bread.T) * (0.5 * n)
        return np.linalg.cholesky(bread)
    except (LinAlgError, np.linalg.LinAlgError) as err:
        raise SingularWeight("GMM sampling precision not positive definite") from err


def draw_zeta(
    system: OptSystem,
    data: Dataset,
    rng: np.random.Generator,
    solution: GmmSolution | None = None,
) -> np.ndarray:
    """One Gaussian draw of (phi_active, theta) around the GMM minimizer."""
    sol = solution if solution is not None else gmm_solve(system, data)
    chol = _zeta_precision_chol(sol, system.n)
    noise = solve_triangular(
        chol, rng.standard_normal(system.q + 1), lower=True, trans="T", check_finite=False
    )
    return sol.zeta + noise


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------


class _GmmCache:
    """Memoized GMM solution and draw factor per augmented support."""

    def __init__(self, data: Dataset, max_entries: int = 128):
        self.data = data
        self.max_entries = max_entries
        self._store: dict[bytes, tuple] = {}

    def get(self, u: np.ndarray):
        key = u.tobytes()
        hit = self._store.get(key)
        if hit is None:
            system = build_u_opt(self.data, u)
            sol = gmm_solve(system, self.data)
            chol = _zeta_precision_chol(sol, system.n)
            hit = (system, sol, chol)
            if len(self._store) >= self.max_entries:
                self._store.pop(next(iter(self._store)))
            self._store[key] = hit
        return hit


def run_obsps_chain(
    data: Dataset,
    priors: PriorConfig | None = None,
    burn_in: int = 2000,
    kept: int = 2000,
    seed: int = 0,
    inner_steps: int = 20,
) -> PosteriorSample:
    """Full augmented sampler: response sweeps, working-model sweeps, mean draw.

    Per sweep: (1) one response-model Gibbs sweep refreshes the
    indicators z, (2) ``inner_steps`` working-model sub-sweeps refresh
    (u, beta, sigma2) with u forced to contain z, (3) one draw of
    (phi_active, theta) around the GMM solution on the support u.  Failed
    sweeps keep the previous state; more than 1% failures aborts.
    """
    if burn_in < 1 or kept < 1:
        raise ValueError("need burn_in >= 1 and kept >= 1")
    priors = priors or PriorConfig()
    rng = _chain_rng(seed)
    total = burn_in + kept
    max_failures = 0.01 * total

    obs = data.delta == 1
    if not obs.any():
        raise NoRespondents("no observed outcomes")
    x_obs = data.x[obs]
    y_obs = data.y[obs]
    s_xx = x_obs.T @ x_obs
    s_xy = x_obs.T @ y_obs

    mode_cache = _ModeCache(data, priors)
    gmm_cache = _GmmCache(data)

    z = np.ones(data.d, dtype=np.int8)
    phi, _ = mode_cache.get(z)
    sigma2 = float(np.var(y_obs, ddof=1)) if y_obs.size > 1 else 1.0
    u = z.copy()
    beta, sigma2 = _conjugate_beta_sigma(x_obs, y_obs, s_xx, s_xy, u, sigma2, priors, rng)
    theta_rec = _ipw_ratio(data.delta / propensity(data.x, phi), data.y, data.delta)
    phi_rec = phi.copy()

    draws = []
    failures = 0
    for t in range(total):
        try:
            z_new = draw_model_step(phi, priors, rng)
            mode, chol_phi = mode_cache.get(z_new)
            phi_new = _gaussian_from_precision_chol(mode, chol_phi, rng)
            draw_theta_step(data, phi_new, rng, active=z_new)  # completes the response sweep

            u_new, beta_new, sigma2_new = u, beta, sigma2
            for _ in range(inner_steps):
                u_new = _draw_u(beta_new, z_new, priors, rng)
                beta_new, sigma2_new = _conjugate_beta_sigma(
                    x_obs, y_obs, s_xx, s_xy, u_new, sigma2_new, priors, rng
                )

            system, sol, chol_zeta = gmm_cache.get(u_new)
            zeta_star = sol.zeta + solve_triangular(
                chol_zeta, rng.standard_normal(system.q + 1),
                lower=True, trans="T", check_finite=False,
            )
            theta_new = float(zeta_star[-1])
            phi_rec_new = np.zeros(data.d)
            phi_rec_new[system.active] = zeta_star[:-1]
        except (NoConvergence, SingularInformation, SingularWeight) as err:
            failures += 1
            if failures > max_failures:
                raise ChainFailure(
                    f"{failures} failed sweeps out of {t + 1} (limit 1%): {err}"
                ) from err
            z_new, phi_new = z, phi
            u_new, beta_new, sigma2_new = u, beta, sigma2
            theta_new, phi_rec_new = theta_rec, phi_rec
        z, phi = z_new, phi_new
        u, beta, sigma2 = u_new, beta_new, sigma2_new
        theta_rec, phi_rec = theta_new, phi_rec_new
        if t >= burn_in:
            draws.append(
                OptChainState(
                    z=z.copy(),
                    phi=phi_rec.copy(),
                    theta=float(theta_rec),
                    u=u.copy(),
                    beta=beta.copy(),
                    sigma2_e=float(sigma2),
                )
            )
    return PosteriorSample(draws=tuple(draws), burn_in=burn_in, kept=kept, seed=seed)

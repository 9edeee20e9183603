"""Two-step Gibbs sampler for sparse Bayesian propensity-score estimation.

Each sweep alternates three draws:

1. model indicators ``z`` from independent Bernoullis whose odds are the
   slab/spike density ratio at the current coefficients,
2. coefficients ``phi`` from a Gaussian centered at the ridge-penalized
   likelihood mode with inverse-curvature covariance, and
3. the outcome mean ``theta`` from the conditional law of the weighted
   estimating function given the observed score, under a flat prior.

The mode and covariance depend on the data only through ``z``, so the
chain driver memoizes them per visited model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.special import expit

from .baseline import EstimateReport, _ipw_ratio
from .data import Dataset
from .exceptions import ChainFailure, NoConvergence, NoRespondents, SingularInformation
from .model import PriorConfig, fisher_info, log_likelihood, propensity
from .optim import newton_maximize

__all__ = [
    "ChainState",
    "OptChainState",
    "PosteriorSample",
    "model_inclusion_probability",
    "draw_model_step",
    "penalized_mode",
    "laplace_covariance",
    "draw_phi_step",
    "draw_theta_step",
    "run_bsps_chain",
    "summarize_posterior",
]


@dataclass(frozen=True)
class ChainState:
    """One post-sweep state: model indicators, coefficients, outcome mean."""

    z: np.ndarray
    phi: np.ndarray
    theta: float


@dataclass(frozen=True)
class OptChainState(ChainState):
    """Chain state extended with the working-outcome-model block."""

    u: np.ndarray
    beta: np.ndarray
    sigma2_e: float


@dataclass(frozen=True)
class PosteriorSample:
    """Kept post-burn-in draws of a chain, with the seed that produced them."""

    draws: tuple
    burn_in: int
    kept: int
    seed: int

    def __post_init__(self):
        if self.kept != len(self.draws):
            raise ValueError("kept must equal the number of stored draws")

    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.draws])

    def inclusion_frequencies(self, which: str = "z") -> np.ndarray:
        """Per-coordinate frequency of indicator == 1 across kept draws."""
        return np.mean([getattr(s, which) for s in self.draws], axis=0)

    def to_csv(self, path) -> None:
        """Columnar dump (iteration, theta, phi_*, z_*, and, when present,
        u_*, beta_*, sigma2_e) for external diagnostics."""
        first = self.draws[0]
        d = first.phi.shape[0]
        extended = isinstance(first, OptChainState)
        header = ["iteration", "theta"]
        header += [f"phi_{j}" for j in range(d)]
        header += [f"z_{j}" for j in range(d)]
        if extended:
            header += [f"u_{j}" for j in range(d)]
            header += [f"beta_{j}" for j in range(d)]
            header += ["sigma2_e"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, s in enumerate(self.draws):
                row = [self.burn_in + k, repr(float(s.theta))]
                row += [repr(float(v)) for v in s.phi]
                row += [int(v) for v in s.z]
                if extended:
                    row += [int(v) for v in s.u]
                    row += [repr(float(v)) for v in s.beta]
                    row += [repr(float(s.sigma2_e))]
                writer.writerow(row)


def _gauss_logpdf(x: np.ndarray, variance: float) -> np.ndarray:
    return -0.5 * (np.log(2.0 * np.pi * variance) + x * x / variance)


def model_inclusion_probability(phi: np.ndarray, priors: PriorConfig) -> np.ndarray:
    """Posterior inclusion probabilities given coefficients.

    Coordinate-wise Bernoulli success probabilities
    ``w psi(phi_j | 0, nu1) / [w psi(phi_j | 0, nu1) + (1-w) psi(phi_j | 0, nu0)]``
    evaluated in log space so the spike density can underflow safely.
    The intercept (index 0) is pinned to probability 1.
    """
    phi = np.asarray(phi, dtype=float)
    d = phi.shape[0]
    w = priors.w_vector(d)
    log_slab = np.log(w) + _gauss_logpdf(phi, priors.nu1)
    log_spike = np.log1p(-w) + _gauss_logpdf(phi, priors.nu0)
    prob = expit(log_slab - log_spike)
    prob[0] = 1.0
    return prob


def draw_model_step(phi: np.ndarray, priors: PriorConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw model indicators; the intercept is never deselected."""
    prob = model_inclusion_probability(phi, priors)
    z = (rng.random(prob.shape[0]) < prob).astype(np.int8)
    z[0] = 1
    return z


def _penalized_closures(data: Dataset, vinv: np.ndarray):
    x = data.x
    delta = data.delta

    def evaluate(phi):
        pi = propensity(x, phi)
        val = float(np.sum(delta * np.log(pi) + (1 - delta) * np.log1p(-pi)))
        val -= 0.5 * float(phi @ (vinv * phi))
        grad = (delta - pi) @ x - vinv * phi
        curve = (x * (pi * (1.0 - pi))[:, None]).T @ x
        curve[np.diag_indices_from(curve)] += vinv
        return val, grad, curve

    def value(phi):
        return log_likelihood(data, phi) - 0.5 * float(phi @ (vinv * phi))

    return evaluate, value


def penalized_mode(
    data: Dataset,
    z: np.ndarray,
    priors: PriorConfig,
    *,
    phi_init: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> np.ndarray:
    """Mode of the likelihood times the Gaussian spike/slab prior given z.

    Solves ``score(phi) - Vz^-1 phi = 0`` by damped Newton.  The ridge
    term makes the system strictly concave, so the solve succeeds even
    with more columns than rows.
    """
    vinv = 1.0 / priors.slab_spike_variances(z)
    evaluate, value = _penalized_closures(data, vinv)
    x0 = np.zeros(data.d) if phi_init is None else phi_init
    mode, _ = newton_maximize(
        x0, evaluate, value, tol=tol, max_iter=max_iter, what="penalized mode"
    )
    return mode


def _penalized_curvature(data: Dataset, phi_mode: np.ndarray, vinv: np.ndarray) -> np.ndarray:
    h = data.n * fisher_info(data, phi_mode)
    h[np.diag_indices_from(h)] += vinv
    return h


def laplace_covariance(
    data: Dataset, phi_mode: np.ndarray, z: np.ndarray, priors: PriorConfig
) -> np.ndarray:
    """Gaussian-approximation covariance ``(n I_phi + Vz^-1)^-1`` at the mode.

    Symmetric positive definite by construction; a Cholesky failure here
    is an internal fault, not a data condition.
    """
    h = _penalized_curvature(data, phi_mode, 1.0 / priors.slab_spike_variances(z))
    try:
        factor = cho_factor(h, lower=True, check_finite=False)
    except LinAlgError as err:  # pragma: no cover - SPD by construction
        raise RuntimeError("laplace curvature lost positive definiteness") from err
    cov = cho_solve(factor, np.eye(data.d), check_finite=False)
    return (cov + cov.T) / 2.0


def _curvature_chol(data: Dataset, phi_mode: np.ndarray, z, priors) -> np.ndarray:
    """Lower Cholesky factor of the penalized curvature at the mode.

    Gaussian draws use ``mode + L^-T standard_normal``, which has the
    approximation covariance without ever forming the explicit inverse.
    """
    h = _penalized_curvature(data, phi_mode, 1.0 / priors.slab_spike_variances(z))
    try:
        return np.linalg.cholesky(h)
    except np.linalg.LinAlgError as err:  # pragma: no cover - SPD by construction
        raise RuntimeError("laplace curvature lost positive definiteness") from err


def _gaussian_from_precision_chol(mean, chol_lower, rng) -> np.ndarray:
    noise = solve_triangular(
        chol_lower, rng.standard_normal(mean.shape[0]), lower=True, trans="T", check_finite=False
    )
    return mean + noise


def draw_phi_step(
    data: Dataset,
    z: np.ndarray,
    priors: PriorConfig,
    rng: np.random.Generator,
    *,
    phi_init: np.ndarray | None = None,
) -> np.ndarray:
    """One Gaussian coefficient draw centered at the penalized mode."""
    mode = penalized_mode(data, z, priors, phi_init=phi_init)
    chol = _curvature_chol(data, mode, z, priors)
    return _gaussian_from_precision_chol(mode, chol, rng)


def draw_theta_step(
    data: Dataset,
    phi: np.ndarray,
    rng: np.random.Generator,
    active=None,
) -> float:
    """Draw the outcome mean from its conditional law given the score.

    Under joint asymptotic normality of the score and the weighted
    estimating function, the latter given the observed score value is
    Gaussian; drawing it and solving the weighted estimating equation
    for ``theta`` yields one posterior draw under a flat prior.  When
    ``active`` is given, the score block, the propensities, and the
    plug-in moments are restricted to the active coordinates, which
    keeps the score second-moment block well conditioned when most
    coordinates sit in the spike.
    """
    if data.n_respondents == 0:
        raise NoRespondents("no observed outcomes")
    if active is None:
        mask = np.ones(data.d, dtype=bool)
    else:
        mask = np.asarray(active).astype(bool)
        mask[0] = True
    xs = data.x[:, mask]
    pi = propensity(xs, phi[mask])
    n = data.n
    delta = data.delta
    w = delta / pi
    y_filled = np.where(delta == 1, data.y, 0.0)
    theta_tilde = _ipw_ratio(w, data.y, delta)

    s_cols = (delta - pi)[:, None] * xs  # per-unit score contributions
    u = w * (y_filled - theta_tilde)
    stacked = np.hstack([s_cols, u[:, None]])
    sigma = stacked.T @ stacked / n
    k = xs.shape[1]
    s11 = sigma[:k, :k]
    s12 = sigma[:k, k]
    s22 = sigma[k, k]

    try:
        factor = cho_factor(s11, lower=True, check_finite=False)
    except LinAlgError as err:
        raise SingularInformation(
            "score second-moment block singular on the active coordinates"
        ) from err
    s_obs = s_cols.sum(axis=0) / np.sqrt(n)
    solved = cho_solve(factor, np.column_stack([s_obs, s12]), check_finite=False)
    mean = float(s12 @ solved[:, 0])
    var = max(float(s22 - s12 @ solved[:, 1]), 0.0)
    v_star = mean + np.sqrt(var) * rng.standard_normal()

    w_sum = float(w.sum())
    return (float(w @ y_filled) - np.sqrt(n) * v_star) / w_sum


class _ModeCache:
    """Memoized (mode, curvature Cholesky) per model indicator vector."""

    def __init__(self, data: Dataset, priors: PriorConfig, max_entries: int = 128):
        self.data = data
        self.priors = priors
        self.max_entries = max_entries
        self._store: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
        self.last_mode: np.ndarray | None = None

    def get(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        key = z.tobytes()
        hit = self._store.get(key)
        if hit is None:
            mode = penalized_mode(self.data, z, self.priors, phi_init=self.last_mode)
            hit = (mode, _curvature_chol(self.data, mode, z, self.priors))
            if len(self._store) >= self.max_entries:
                self._store.pop(next(iter(self._store)))
            self._store[key] = hit
        self.last_mode = hit[0]
        return hit


def _chain_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def run_bsps_chain(
    data: Dataset,
    priors: PriorConfig | None = None,
    burn_in: int = 2000,
    kept: int = 2000,
    seed: int = 0,
) -> PosteriorSample:
    """Run the model / coefficient / mean Gibbs sweeps.

    Starts dense (all indicators 1) with coefficients at the
    ridge-stabilized likelihood mode so the model step prunes from
    above.  Sweeps that fail to converge keep the previous state;
    the chain aborts with :class:`ChainFailure` once more than 1% of
    sweeps have failed.
    """
    if burn_in < 1 or kept < 1:
        raise ValueError("need burn_in >= 1 and kept >= 1")
    priors = priors or PriorConfig()
    rng = _chain_rng(seed)
    total = burn_in + kept
    max_failures = 0.01 * total

    cache = _ModeCache(data, priors)
    z = np.ones(data.d, dtype=np.int8)
    phi, _ = cache.get(z)
    theta = _ipw_ratio(data.delta / propensity(data.x, phi), data.y, data.delta)

    draws = []
    failures = 0
    for t in range(total):
        try:
            z_new = draw_model_step(phi, priors, rng)
            mode, chol = cache.get(z_new)
            phi_new = _gaussian_from_precision_chol(mode, chol, rng)
            theta_new = draw_theta_step(data, phi_new, rng, active=z_new)
        except (NoConvergence, SingularInformation) as err:
            failures += 1
            if failures > max_failures:
                raise ChainFailure(
                    f"{failures} failed sweeps out of {t + 1} (limit 1%): {err}"
                ) from err
            z_new, phi_new, theta_new = z, phi, theta
        z, phi, theta = z_new, phi_new, theta_new
        if t >= burn_in:
            draws.append(ChainState(z=z.copy(), phi=phi.copy(), theta=float(theta)))
    return PosteriorSample(draws=tuple(draws), burn_in=burn_in, kept=kept, seed=seed)


def summarize_posterior(
    sample: PosteriorSample,
    level: float = 0.95,
    *,
    method: str = "bsps",
    support_from: str = "z",
    diagnostics: dict | None = None,
) -> EstimateReport:
    """Posterior mean, spread, and equal-tailed quantile interval.

    The selected support is the median-probability model: coordinates
    whose inclusion frequency across kept draws exceeds one half.
    """
    if sample.kept < 2:
        raise ValueError("need at least 2 kept draws to summarize")
    thetas = sample.thetas()
    mean = float(thetas.mean())
    sd = float(thetas.std(ddof=1))
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(thetas, [alpha, 1.0 - alpha])
    freq = sample.inclusion_frequencies(which=support_from)
    selected = (freq > 0.5).astype(np.int8)
    selected[0] = 1
    return EstimateReport(
        theta_hat=mean,
        se_hat=sd,
        ci_low=float(lo),
        ci_high=float(hi),
        method=method,
        selected_support=[int(v) for v in selected],
        converged=True,
        diagnostics=diagnostics or {},
    )

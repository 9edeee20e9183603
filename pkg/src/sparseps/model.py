"""Logistic response-probability model: link, likelihood, score, information.

Everything here is a pure function of its arguments; the rest of the
package (Newton fits, Gibbs samplers, GMM systems) is built on these
primitives.  The link is fixed to the logistic CDF but isolated in
:func:`link_logistic` so another CDF could be dropped in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PROB_FLOOR",
    "CLAMP_ETA",
    "PriorConfig",
    "link_logistic",
    "propensity",
    "clamp_events",
    "log_likelihood",
    "score",
    "fisher_info",
]

# Probabilities are clamped to [PROB_FLOOR, 1 - PROB_FLOOR] so that
# inverse-probability weights stay finite near separation.  Fits count
# clamp events as a diagnostic: a clamped fit signals near-separation.
PROB_FLOOR = 1e-12
# |eta| beyond which the logistic CDF leaves the clamp interval.
CLAMP_ETA = float(np.log((1.0 - PROB_FLOOR) / PROB_FLOOR))


def link_logistic(eta):
    """Logistic CDF ``exp(eta) / (1 + exp(eta))``, clamped away from 0 and 1.

    Evaluated branch-wise so large negative inputs never overflow:
    for eta < 0 the equivalent form ``exp(eta) / (1 + exp(eta))`` is
    used, otherwise ``1 / (1 + exp(-eta))``.
    """
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    neg = eta < 0
    e = np.exp(eta[neg])
    out[neg] = e / (1.0 + e)
    out[~neg] = 1.0 / (1.0 + np.exp(-eta[~neg]))
    out = np.clip(out, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return out if out.ndim else float(out)


def propensity(x, phi: np.ndarray):
    """Response probability ``G(x . phi)`` for one row or a matrix of rows."""
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if x.shape[-1] != phi.shape[0]:
        raise ValueError(
            f"dimension mismatch: x has {x.shape[-1]} columns, phi has {phi.shape[0]}"
        )
    return link_logistic(x @ phi)


def clamp_events(x, phi: np.ndarray) -> int:
    """Number of rows whose linear predictor lands in the clamped tails."""
    eta = np.asarray(x, dtype=float) @ np.asarray(phi, dtype=float)
    return int(np.count_nonzero(np.abs(eta) > CLAMP_ETA))


def log_likelihood(data, phi: np.ndarray) -> float:
    """Bernoulli log-likelihood of the response indicators."""
    pi = propensity(data.x, phi)
    delta = data.delta
    return float(np.sum(delta * np.log(pi) + (1 - delta) * np.log1p(-pi)))


def score(data, phi: np.ndarray) -> np.ndarray:
    """Gradient of :func:`log_likelihood`: ``sum_i (delta_i - pi_i) x_i``."""
    pi = propensity(data.x, phi)
    return (data.delta - pi) @ data.x


def fisher_info(data, phi: np.ndarray) -> np.ndarray:
    """Average information matrix ``n^-1 sum_i pi_i (1 - pi_i) x_i x_i^T``.

    For the logistic link the observed and expected information agree,
    so this equals minus the Hessian of the log-likelihood divided by n.
    Always symmetric positive semidefinite.
    """
    pi = propensity(data.x, phi)
    w = pi * (1.0 - pi)
    xw = data.x * w[:, None]
    info = xw.T @ data.x / data.n
    return (info + info.T) / 2.0


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters for the spike-and-slab samplers.

    ``nu0 < nu1`` are the spike/slab variances of the response-model
    coefficients; ``w`` is the prior inclusion probability (scalar or
    per-coordinate).  ``gamma0 < gamma1`` and ``xi`` play the same roles
    for the working outcome model, and ``(c1, c2)`` parametrize the
    inverse-gamma prior on its error variance.  Defaults are the
    noninformative settings used throughout the simulation study.
    """

    nu0: float = 1e-4
    nu1: float = 1e4
    w: float | np.ndarray = 0.5
    xi: float | np.ndarray = 0.5
    gamma0: float = 1e-4
    gamma1: float = 1e4
    c1: float = 1e-7
    c2: float = 1e-7

    def __post_init__(self):
        if not (0 < self.nu0 < self.nu1):
            raise ValueError("need 0 < nu0 < nu1")
        if not (0 < self.gamma0 < self.gamma1):
            raise ValueError("need 0 < gamma0 < gamma1")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("need c1 > 0 and c2 > 0")
        for name in ("w", "xi"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v <= 0) or np.any(v >= 1):
                raise ValueError(f"{name} entries must lie in (0, 1)")

    def w_vector(self, d: int) -> np.ndarray:
        """Per-coordinate prior inclusion probabilities, broadcast to length d."""
        return np.broadcast_to(np.asarray(self.w, dtype=float), (d,))

    def xi_vector(self, d: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.xi, dtype=float), (d,))

    def slab_spike_variances(self, z: np.ndarray, slab: float | None = None,
                             spike: float | None = None) -> np.ndarray:
        """Diagonal of the conditional prior covariance given indicators z."""
        slab = self.nu1 if slab is None else slab
        spike = self.nu0 if spike is None else spike
        z = np.asarray(z)
        return np.where(z == 1, slab, spike).astype(float)

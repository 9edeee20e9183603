"""Damped Newton ascent shared by the likelihood and penalized-mode fits."""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exceptions import NoConvergence, SingularInformation

__all__ = ["newton_maximize"]


def newton_maximize(
    x0: np.ndarray,
    evaluate,
    value,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_halvings: int = 30,
    cond_limit: float | None = None,
    what: str = "objective",
):
    """Maximize a smooth concave objective by damped Newton steps.

    Parameters
    ----------
    x0 : ndarray
        Starting point.
    evaluate : callable
        ``evaluate(x) -> (value, gradient, curvature)`` where
        ``curvature`` is minus the Hessian (positive definite on
        well-posed input).
    value : callable
        Cheap objective-only evaluation used inside step halving.
    tol : float
        Convergence threshold on the max-norm of the gradient.
    cond_limit : float or None
        When set, raise :class:`SingularInformation` if the curvature
        matrix has condition number above this limit (or fails to
        factor).  When ``None`` the curvature is positive definite by
        construction and a factorization failure is an internal fault.

    Returns
    -------
    x : ndarray
    info : dict with ``iterations``, ``halvings`` and ``max_grad``.
    """
    x = np.asarray(x0, dtype=float).copy()
    val, grad, curve = evaluate(x)
    halvings_total = 0
    for iteration in range(max_iter):
        max_grad = float(np.max(np.abs(grad)))
        if max_grad < tol:
            return x, {
                "iterations": iteration,
                "halvings": halvings_total,
                "max_grad": max_grad,
            }
        if cond_limit is not None and np.linalg.cond(curve) > cond_limit:
            raise SingularInformation(
                f"{what}: curvature condition number exceeds {cond_limit:g}"
            )
        try:
            factor = cho_factor(curve, lower=True, check_finite=False)
        except LinAlgError as err:
            if cond_limit is not None:
                raise SingularInformation(f"{what}: curvature not positive definite") from err
            raise RuntimeError(f"{what}: curvature lost positive definiteness") from err
        step = cho_solve(factor, grad, check_finite=False)

        t = 1.0
        slack = 1e-12 * (1.0 + abs(val))
        for _ in range(max_halvings + 1):
            cand = x + t * step
            cand_val = value(cand)
            if np.isfinite(cand_val) and cand_val >= val - slack:
                break
            t *= 0.5
            halvings_total += 1
        else:
            raise NoConvergence(f"{what}: no ascent step after {max_halvings} halvings")
        x = cand
        val, grad, curve = evaluate(x)
    max_grad = float(np.max(np.abs(grad)))
    if max_grad < tol:
        return x, {
            "iterations": max_iter,
            "halvings": halvings_total,
            "max_grad": max_grad,
        }
    raise NoConvergence(f"{what}: gradient max-norm {max_grad:.3e} after {max_iter} iterations")

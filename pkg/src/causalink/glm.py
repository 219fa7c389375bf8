"""Weighted logistic and least-squares solvers for the M-step score equations.

Both solvers drive a weighted score to (near) zero: Newton with step-halving
for the logistic score, a direct normal-equation solve for least squares.
Targets of the logistic solver may be fractional (posterior weights), which
the Bernoulli score accommodates without change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class SingularDesign(Exception):
    pass


class InsufficientWeight(Exception):
    pass


SEPARATION_NORM = 30.0  # on the column-scaled design
RIDGE_JITTER = 1e-10


@dataclass
class FitResult:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    separation: bool = False
    ridge_used: bool = False
    diagnostics: dict = field(default_factory=dict)


def logistic(u):
    """Overflow-safe exp(u)/(1+exp(u))."""
    return expit(u)


def _column_scales(design: np.ndarray) -> np.ndarray:
    scales = design.std(axis=0)
    scales[scales == 0] = 1.0
    return scales


def fit_logistic_weighted(design, targets, weights, tol: float = 1e-9,
                          max_iter: int = 100, start=None) -> FitResult:
    """Solve sum_i w_i d_i (t_i - logistic(d_i'c)) = 0 by damped Newton."""
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    n, d = design.shape
    wsum = float(weights.sum())
    if wsum <= 0:
        raise InsufficientWeight("total weight must be positive")
    scale = 1.0 + wsum
    scales = _column_scales(design)

    coef = np.zeros(d) if start is None else np.asarray(start, dtype=float).copy()

    def loglik(c):
        eta = design @ c
        # w * (t*eta - log(1+exp(eta))), stable via logaddexp
        return float(np.sum(weights * (targets * eta - np.logaddexp(0.0, eta))))

    def score(c):
        p = expit(design @ c)
        return design.T @ (weights * (targets - p))

    ridge_used = False
    separation = False
    ll = loglik(coef)
    g = score(coef)
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(design @ coef)
        wvar = weights * p * (1.0 - p)
        hess = design.T @ (design * wvar[:, None])
        try:
            step = np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            ridge_used = True
            hess = hess + RIDGE_JITTER * np.eye(d)
            step = np.linalg.solve(hess, g)
        # step halving on the weighted log-likelihood
        t = 1.0
        for _ in range(40):
            cand = coef + t * step
            ll_cand = loglik(cand)
            if ll_cand >= ll - 1e-12 * (1 + abs(ll)):
                break
            t *= 0.5
        coef = coef + t * step
        ll = loglik(coef)
        g = score(coef)
        gnorm = float(np.linalg.norm(g))
        if float(np.linalg.norm(coef * scales)) > SEPARATION_NORM:
            separation = True
            break
        if gnorm <= tol * scale:
            # one clean-up Newton step; quadratic convergence drives the
            # score to machine precision
            p = expit(design @ coef)
            wvar = weights * p * (1.0 - p)
            hess = design.T @ (design * wvar[:, None])
            try:
                extra = np.linalg.solve(hess, g)
                if loglik(coef + extra) >= ll - 1e-10 * (1 + abs(ll)):
                    coef = coef + extra
                    g = score(coef)
            except np.linalg.LinAlgError:
                pass
            break
    gnorm = float(np.linalg.norm(g))
    converged = (not separation) and gnorm <= tol * scale
    return FitResult(coefficients=coef, converged=converged, iterations=it,
                     final_gradient_norm=gnorm, separation=separation,
                     ridge_used=ridge_used)


def fit_wls(design, response, weights) -> FitResult:
    """Solve the weighted normal equations exactly."""
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    gram = design.T @ (design * weights[:, None])
    rhs = design.T @ (weights * response)
    ridge_used = False
    try:
        coef = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        gram_j = gram + RIDGE_JITTER * np.eye(gram.shape[0])
        try:
            coef = np.linalg.solve(gram_j, rhs)
            ridge_used = True
        except np.linalg.LinAlgError:
            raise SingularDesign("weighted Gram matrix is singular")
    if not np.all(np.isfinite(coef)):
        raise SingularDesign("weighted Gram matrix is numerically singular")
    resid_score = design.T @ (weights * (response - design @ coef))
    return FitResult(coefficients=coef, converged=True, iterations=1,
                     final_gradient_norm=float(np.linalg.norm(resid_score)),
                     ridge_used=ridge_used)


def residual_variance(design, response, weights, coefficients) -> float:
    """Weighted mean squared residual with denominator sum(w) - d."""
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    coefficients = np.asarray(coefficients, dtype=float).ravel()
    d = design.shape[1] if design.ndim == 2 else 0
    denom = float(weights.sum()) - d
    if denom <= 0:
        raise InsufficientWeight("sum of weights must exceed parameter count")
    resid = response - (design @ coefficients if d else 0.0)
    return float(np.sum(weights * resid ** 2) / denom)

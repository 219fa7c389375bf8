import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from causalink import glm


def _random_instance(rng, n=40, d=3, fractional=False):
    design = np.column_stack([np.ones(n), rng.standard_normal((n, d - 1))])
    coef = rng.uniform(-1, 1, d)
    if fractional:
        targets = rng.random(n)
    else:
        targets = (rng.random(n) < expit(design @ coef)).astype(float)
    weights = rng.uniform(0.1, 2.0, n)
    return design, targets, weights


def test_logistic_drives_score_to_zero():
    rng = np.random.default_rng(1)
    design, targets, weights = _random_instance(rng, n=200)
    fit = glm.fit_logistic_weighted(design, targets, weights)
    assert fit.converged
    p = expit(design @ fit.coefficients)
    score = design.T @ (weights * (targets - p))
    assert np.linalg.norm(score) < 1e-6 * (1 + weights.sum())


def test_logistic_recovers_coefficients_large_n():
    rng = np.random.default_rng(2)
    n = 200_000
    design = np.column_stack([np.ones(n), rng.standard_normal(n)])
    coef = np.array([-0.5, 1.2])
    targets = (rng.random(n) < expit(design @ coef)).astype(float)
    fit = glm.fit_logistic_weighted(design, targets, np.ones(n))
    np.testing.assert_allclose(fit.coefficients, coef, atol=0.03)


def test_logistic_fractional_targets_intercept_only():
    # constant fractional target t on an intercept-only design: the score
    # zero is exactly the logit of t
    design = np.ones((50, 1))
    fit = glm.fit_logistic_weighted(design, np.full(50, 0.3), np.ones(50))
    assert fit.coefficients[0] == pytest.approx(np.log(0.3 / 0.7), abs=1e-8)


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(100):
        design, targets, weights = _random_instance(
            rng, n=30, fractional=bool(rng.integers(2)))
        coef = rng.uniform(-0.5, 0.5, design.shape[1])

        def loglik(c):
            eta = design @ c
            return float(np.sum(weights * (targets * eta
                                           - np.logaddexp(0.0, eta))))
        p = expit(design @ coef)
        analytic = design.T @ (weights * (targets - p))
        fd = np.empty_like(coef)
        for k in range(coef.size):
            step = 1e-6 * (1 + abs(coef[k]))
            up = coef.copy(); up[k] += step
            dn = coef.copy(); dn[k] -= step
            fd[k] = (loglik(up) - loglik(dn)) / (2 * step)
        denom = max(np.linalg.norm(analytic), 1.0)
        assert np.linalg.norm(analytic - fd) / denom < 1e-4


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(min_value=0.05, max_value=20.0),
       seed=st.integers(min_value=0, max_value=10_000))
def test_logistic_weight_scale_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    design, targets, weights = _random_instance(rng, n=60)
    f1 = glm.fit_logistic_weighted(design, targets, weights)
    f2 = glm.fit_logistic_weighted(design, targets, weights * scale)
    np.testing.assert_allclose(f1.coefficients, f2.coefficients, atol=1e-6)


def test_logistic_separation_flagged():
    design = np.column_stack([np.ones(20), np.arange(20.0)])
    targets = (np.arange(20) >= 10).astype(float)
    fit = glm.fit_logistic_weighted(design, targets, np.ones(20))
    assert fit.separation
    assert not fit.converged


def test_logistic_zero_weight_raises():
    with pytest.raises(glm.InsufficientWeight):
        glm.fit_logistic_weighted(np.ones((5, 1)), np.zeros(5), np.zeros(5))


def test_wls_matches_lstsq():
    rng = np.random.default_rng(4)
    design = rng.standard_normal((50, 3))
    response = rng.standard_normal(50)
    weights = rng.uniform(0.2, 2.0, 50)
    fit = glm.fit_wls(design, response, weights)
    sw = np.sqrt(weights)
    expected, *_ = np.linalg.lstsq(design * sw[:, None], response * sw,
                                   rcond=None)
    np.testing.assert_allclose(fit.coefficients, expected, atol=1e-10)


def test_wls_singular_design_uses_ridge():
    design = np.column_stack([np.ones(10), np.ones(10)])
    fit = glm.fit_wls(design, np.arange(10.0), np.ones(10))
    assert fit.ridge_used
    assert np.all(np.isfinite(fit.coefficients))


def test_residual_variance():
    rng = np.random.default_rng(5)
    design = np.column_stack([np.ones(100), rng.standard_normal(100)])
    coef = np.array([1.0, 2.0])
    response = design @ coef  # zero residuals
    assert glm.residual_variance(design, response, np.ones(100), coef) == 0.0
    with pytest.raises(glm.InsufficientWeight):
        glm.residual_variance(design[:2], response[:2], np.ones(2), coef)


def test_residual_variance_d_zero():
    v = glm.residual_variance(np.empty((4, 0)), np.array([1.0, -1.0, 1.0, -1.0]),
                              np.ones(4), np.empty(0))
    assert v == pytest.approx(1.0)

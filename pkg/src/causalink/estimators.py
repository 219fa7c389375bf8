"""ATE estimators for linked data with mismatch error.

Divisor conventions: n for the naive and lambda-family estimators, |A| for
the audit-anchored PS and DR corrections, |A0| for the correct-matches-only
estimator. Propensities and match weights are clipped to [1e-3, 1-1e-3]
before any division, with a diagnostic count of clipped records.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import em_engine, glm, inference, mixture
from .data_model import EstimateReport, LinkedDataset, Scenario, Theta
from .inference import LambdaSpec, clip_count, clip_unit


class EmptyAudit(Exception):
    pass


class SingleClassAudit(Exception):
    pass


class ExtremePropensity(Exception):
    pass


class ExtremeMatchWeight(Exception):
    pass


def _ht_contrast(y, e, p) -> np.ndarray:
    """Per-record Horvitz-Thompson contrast e*y/p - (1-e)*y/(1-p)."""
    return e * y / p - (1 - e) * y / (1 - p)


def tau_plain(dataset: LinkedDataset) -> float:
    """Unadjusted difference of exposure-group outcome means."""
    e, y = dataset.e, dataset.y
    if e.sum() == 0 or e.sum() == e.size:
        raise ExtremePropensity("one exposure arm is empty")
    return float(y[e == 1].mean() - y[e == 0].mean())


def tau_naive(dataset: LinkedDataset, phi: np.ndarray) -> float:
    """Standard PS estimator with divisor n, treating all links as correct."""
    p = clip_unit(expit(dataset.x @ np.asarray(phi, dtype=float)))
    return float(_ht_contrast(dataset.y, dataset.e, p).sum() / dataset.n)


def _outcome_contrast_fit(dataset: LinkedDataset, weights: np.ndarray) -> float:
    design = np.hstack([dataset.x, dataset.e[:, None] * dataset.x])
    fit = glm.fit_wls(design, dataset.y, weights)
    beta_ex = fit.coefficients[dataset.p_x:]
    return float(np.mean(dataset.x @ beta_ex))


def tau_conventional_ignoring(dataset: LinkedDataset, kind: str) -> float:
    """Outcome-model or PS estimator fitted on the linked data as-is."""
    ones = np.ones(dataset.n)
    if kind == "outcome":
        return _outcome_contrast_fit(dataset, ones)
    if kind == "ps":
        fit = glm.fit_logistic_weighted(dataset.x, dataset.e, ones)
        return tau_naive(dataset, fit.coefficients)
    raise ValueError(f"unknown kind {kind!r}; expected 'outcome' or 'ps'")


def tau_audit_correct_only(dataset: LinkedDataset, phi: np.ndarray) -> float:
    """PS estimator over verified correct matches, divisor |A0|."""
    mask = dataset.in_audit & (dataset.m_audit == 0)
    if not mask.any():
        raise EmptyAudit("no verified correct matches")
    p = clip_unit(expit(dataset.x[mask] @ np.asarray(phi, dtype=float)))
    return float(_ht_contrast(dataset.y[mask], dataset.e[mask], p).mean())


def _fit_audit_nuisances(dataset: LinkedDataset):
    """Plug-in steps: gamma on the audit sample, phi on the scenario's
    uncontaminated support (full sample for Scenario I, correct audit
    matches otherwise)."""
    audit = dataset.audit_indices
    if audit.size == 0:
        raise EmptyAudit("audit sample is empty")
    m_aud = dataset.m_audit[audit]
    if m_aud.sum() in (0, m_aud.size):
        raise SingleClassAudit("audit sample contains a single match-status class")
    gamma = glm.fit_logistic_weighted(
        dataset.z[audit], m_aud, np.ones(audit.size)).coefficients
    if dataset.scenario == Scenario.I:
        support = np.ones(dataset.n, dtype=bool)
    else:
        support = dataset.in_audit & (dataset.m_audit == 0)
        if not support.any():
            raise EmptyAudit("no correct matches to fit the propensity model")
    phi = glm.fit_logistic_weighted(
        dataset.x[support], dataset.e[support],
        np.ones(int(support.sum()))).coefficients
    return gamma, phi


def _tau_ps_audit_value(dataset: LinkedDataset, gamma, phi):
    audit = dataset.in_audit
    n_a = int(audit.sum())
    m_obs = np.where(audit, dataset.m_audit, 1)
    correct = audit & (m_obs == 0)
    h = expit(dataset.z @ gamma)
    p_raw = expit(dataset.x @ phi)
    n_clip = clip_count(p_raw[audit]) + clip_count((1.0 - h)[audit])
    p = clip_unit(p_raw)
    omh = clip_unit(1.0 - h)
    terms = np.where(correct,
                     _ht_contrast(dataset.y, dataset.e, p) / omh, 0.0)
    return float(terms.sum() / n_a), n_clip


def tau_ps_adjusted_audit(dataset: LinkedDataset,
                          gamma: np.ndarray | None = None,
                          phi: np.ndarray | None = None,
                          level: float = 0.95) -> EstimateReport:
    """Mismatch-adjusted PS estimator anchored on the audit sample, with a
    stacked-estimating-equation sandwich SE."""
    if gamma is None or phi is None:
        gamma_fit, phi_fit = _fit_audit_nuisances(dataset)
        gamma = gamma_fit if gamma is None else np.asarray(gamma, dtype=float)
        phi = phi_fit if phi is None else np.asarray(phi, dtype=float)
    else:
        if dataset.audit_indices.size == 0:
            raise EmptyAudit("audit sample is empty")
        gamma = np.asarray(gamma, dtype=float)
        phi = np.asarray(phi, dtype=float)
    tau_hat, n_clip = _tau_ps_audit_value(dataset, gamma, phi)
    blocks, scores = inference.audit_ps_system(dataset, gamma, phi, tau_hat)
    cov = inference.sandwich_covariance(blocks, scores)
    var = float(cov[-1, -1])
    se = float(np.sqrt(max(var, 0.0)))
    lo, hi = inference.confidence_interval(tau_hat, max(var, 0.0), level)
    return EstimateReport(
        estimator_id="ps_audit", tau_hat=tau_hat, se=se, ci_low=lo,
        ci_high=hi, n_used=int(dataset.in_audit.sum()), converged=True,
        iterations=1, diagnostics={"n_clipped": n_clip})


def tau_lambda(dataset: LinkedDataset, theta: Theta, m_hat: np.ndarray,
               spec: LambdaSpec) -> float:
    """Lambda-indexed family: (1,0,0) outcome, (0,1,0) PS, (1,1,1) DR."""
    m_hat = np.asarray(m_hat, dtype=float).ravel()
    contrast, b, _ = inference.tau_record_terms(dataset, theta, m_hat, spec)
    total = (spec.lambda1 * contrast + spec.lambda2 * (1.0 - m_hat) * b)
    return float(total.sum() / dataset.n)


def lambda_report(dataset: LinkedDataset, theta: Theta, m_hat: np.ndarray,
                  spec: LambdaSpec,
                  mode: mixture.MixtureMode | None = None,
                  level: float = 0.95,
                  converged: bool = True, iterations: int = 0,
                  compute_se: bool = True) -> EstimateReport:
    """EstimateReport for a lambda-family estimator with sandwich SE."""
    m_hat = np.asarray(m_hat, dtype=float).ravel()
    tau_hat = tau_lambda(dataset, theta, m_hat, spec)
    theta_at = theta.copy()
    theta_at.tau = tau_hat
    _, _, n_clip = inference.tau_record_terms(dataset, theta_at, m_hat, spec)
    se = lo = hi = None
    if compute_se:
        blocks = inference.assemble_jacobian(dataset, theta_at, m_hat, spec,
                                             mode)
        scores = inference.lambda_scores(dataset, theta_at, m_hat, spec)
        cov = inference.sandwich_covariance(blocks, scores)
        var = max(float(cov[-1, -1]), 0.0)
        se = float(np.sqrt(var))
        lo, hi = inference.confidence_interval(tau_hat, var, level)
    return EstimateReport(
        estimator_id=spec.label, tau_hat=tau_hat, se=se, ci_low=lo,
        ci_high=hi, n_used=dataset.n, converged=converged,
        iterations=iterations, diagnostics={"n_clipped": n_clip})


def lambda_report_audit_chain(dataset: LinkedDataset,
                              workflow: em_engine.AuditWorkflowResult,
                              spec: LambdaSpec, level: float = 0.95,
                              compute_se: bool = True) -> EstimateReport:
    """Lambda-family estimator with nuisances from the audit-anchored
    two-chain fit: gamma from the audit logistic, phi from the exposure
    chain, beta and the mismatch posterior from the outcome chain. The
    sandwich stacks that fit's own estimating equations."""
    theta = workflow.theta.copy()
    m_beta = workflow.m_hat_beta.values
    tau_hat = tau_lambda(dataset, theta, m_beta, spec)
    theta.tau = tau_hat
    _, _, n_clip = inference.tau_record_terms(dataset, theta, m_beta, spec)
    se = lo = hi = None
    if compute_se:
        blocks, scores = inference.audit_lambda_system(
            dataset, theta, workflow.m_hat_phi.values, m_beta, spec,
            uniform_phi=workflow.uniform_phi,
            uniform_beta=workflow.uniform_beta)
        cov = inference.sandwich_covariance(blocks, scores)
        var = max(float(cov[-1, -1]), 0.0)
        se = float(np.sqrt(var))
        lo, hi = inference.confidence_interval(tau_hat, var, level)
    return EstimateReport(
        estimator_id=spec.label, tau_hat=tau_hat, se=se, ci_low=lo,
        ci_high=hi, n_used=dataset.n, converged=workflow.converged,
        iterations=workflow.iterations, diagnostics={"n_clipped": n_clip})


def tau_dr_audit_value(dataset: LinkedDataset, theta: Theta) -> tuple[float, int]:
    """Augmented audit estimator: full-sample outcome contrast plus an
    audit-sample correction built from observed match status."""
    audit = dataset.in_audit
    n_a = int(audit.sum())
    if n_a == 0:
        raise EmptyAudit("audit sample is empty")
    x, e, y = dataset.x, dataset.e, dataset.y
    mu1 = theta.mu1(x)
    mu0 = theta.mu0(x)
    outcome_term = float((mu1 - mu0).mean())
    m_obs = np.where(audit, dataset.m_audit, 1)
    correct = audit & (m_obs == 0)
    h = theta.mismatch_prob(dataset.z)
    p_raw = theta.propensity(x)
    n_clip = clip_count(p_raw[audit]) + clip_count((1.0 - h)[audit])
    p = clip_unit(p_raw)
    omh = clip_unit(1.0 - h)
    corr = np.where(
        correct,
        (e * (y - mu1) / p - (1 - e) * (y - mu0) / (1 - p)) / omh, 0.0)
    return outcome_term + float(corr.sum() / n_a), n_clip


def tau_dr_audit(dataset: LinkedDataset,
                 beta_hat: np.ndarray | None = None,
                 gamma_hat: np.ndarray | None = None,
                 phi_hat: np.ndarray | None = None,
                 sigma: float = 1.0,
                 workflow: em_engine.AuditWorkflowResult | None = None,
                 level: float = 0.95,
                 compute_se: bool = True) -> EstimateReport:
    """Audit-sample DR estimator; parameters come from the audit workflow
    unless supplied explicitly (beta_hat concatenates the baseline and
    exposure-interaction blocks)."""
    if workflow is None:
        if beta_hat is None or gamma_hat is None or phi_hat is None:
            workflow = em_engine.run_audit_workflow(dataset, sigma_known=sigma)
        else:
            beta_hat = np.asarray(beta_hat, dtype=float).ravel()
            p = dataset.p_x
            theta = Theta(beta_x=beta_hat[:p], beta_ex=beta_hat[p:],
                          gamma=np.asarray(gamma_hat, dtype=float),
                          phi=np.asarray(phi_hat, dtype=float), sigma=sigma)
            workflow = em_engine.AuditWorkflowResult(
                theta=theta,
                m_hat_phi=em_engine.phi_posterior(dataset, theta),
                m_hat_beta=em_engine.beta_posterior(dataset, theta),
                converged=True, iterations=0)
    theta = workflow.theta.copy()
    tau_hat, n_clip = tau_dr_audit_value(dataset, theta)
    theta.tau = tau_hat
    se = lo = hi = None
    if compute_se:
        blocks, scores = inference.audit_dr_system(
            dataset, theta, workflow.m_hat_phi.values,
            workflow.m_hat_beta.values)
        cov = inference.sandwich_covariance(blocks, scores)
        var = max(float(cov[-1, -1]), 0.0)
        se = float(np.sqrt(var))
        lo, hi = inference.confidence_interval(tau_hat, var, level)
    return EstimateReport(
        estimator_id="dr_audit", tau_hat=tau_hat, se=se, ci_low=lo,
        ci_high=hi, n_used=dataset.n, converged=workflow.converged,
        iterations=workflow.iterations, diagnostics={"n_clipped": n_clip})


def tau_oracle(dataset_clean: LinkedDataset) -> float:
    """Outcome estimator on mismatch-free data (simulation benchmark)."""
    return _outcome_contrast_fit(dataset_clean, np.ones(dataset_clean.n))


def oracle_report(dataset_clean: LinkedDataset,
                  level: float = 0.95) -> EstimateReport:
    """Oracle outcome estimator with a stacked (beta, tau) sandwich SE."""
    n, p = dataset_clean.n, dataset_clean.p_x
    design = np.hstack([dataset_clean.x,
                        dataset_clean.e[:, None] * dataset_clean.x])
    fit = glm.fit_wls(design, dataset_clean.y, np.ones(n))
    beta_ex = fit.coefficients[p:]
    contrast = dataset_clean.x @ beta_ex
    tau_hat = float(contrast.mean())
    resid = dataset_clean.y - design @ fit.coefficients
    d = 2 * p + 1
    scores = np.zeros((n, d))
    scores[:, :2 * p] = design * resid[:, None]
    scores[:, -1] = contrast - tau_hat
    A = np.zeros((d, d))
    A[:2 * p, :2 * p] = -design.T @ design
    A[-1, p:2 * p] = dataset_clean.x.sum(axis=0)
    A[-1, -1] = -float(n)
    blocks = inference.JacobianBlocks(A=A, B=None, C=None)
    cov = inference.sandwich_covariance(blocks, scores)
    var = max(float(cov[-1, -1]), 0.0)
    se = float(np.sqrt(var))
    lo, hi = inference.confidence_interval(tau_hat, var, level)
    return EstimateReport(estimator_id="oracle", tau_hat=tau_hat, se=se,
                          ci_low=lo, ci_high=hi, n_used=n)

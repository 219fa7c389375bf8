"""EM driver solving the coupled estimating equations.

Alternates scenario-specific M-steps (weighted GLM solves) with the mixture
posterior E-step until the parameter iterates stabilize. Scenario I fits the
propensity model once on the full sample; Scenarios II and III reweight it
by the complement of the mismatch posterior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from . import glm, mixture
from .data_model import LinkedDataset, MismatchPosterior, Scenario, Theta
from .mixture import MixtureMode


class NonConvergence(Exception):
    pass


class DegenerateComponent(Exception):
    pass


@dataclass
class EmConfig:
    max_iter: int = 200
    param_tol: float = 1e-6
    init: str = "audit_seeded"  # audit_seeded | prior_h | user_supplied
    sigma_known: float | None = 1.0  # None => estimated each M-step
    mixture_mode: MixtureMode = field(default_factory=MixtureMode)
    theta0: Theta | None = None
    prior_h: float = 0.1
    raise_on_nonconvergence: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.param_tol > 0:
            raise ValueError("param_tol must be positive")


@dataclass
class EmTrace:
    params: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    max_posterior_change: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def to_csv(self) -> str:
        lines = ["iteration,loglik,max_posterior_change,params"]
        for i, (p, ll, dm) in enumerate(
                zip(self.params, self.loglik, self.max_posterior_change), 1):
            pv = ";".join(repr(float(v)) for v in p)
            lines.append(f"{i},{ll!r},{dm!r},{pv}")
        return "\n".join(lines) + "\n"


def _outcome_design(dataset: LinkedDataset) -> np.ndarray:
    return np.hstack([dataset.x, dataset.e[:, None] * dataset.x])


def _param_vector(theta: Theta, include_sigma: bool) -> np.ndarray:
    parts = [theta.beta_x, theta.beta_ex, theta.gamma, theta.phi]
    if include_sigma:
        parts.append([theta.sigma])
    return np.concatenate(parts)


def observed_loglik(dataset: LinkedDataset, theta: Theta,
                    mode: MixtureMode | None = None) -> float:
    """Sum of record-level log mixture densities."""
    if mode is None:
        mode = MixtureMode()
    log_f1, log_f0 = mixture.component_logdensities(dataset, theta, mode)
    zg = dataset.z @ theta.gamma
    per_record = np.logaddexp(mixture.log_expit(zg) + log_f1,
                              mixture.log_expit(-zg) + log_f0)
    return float(per_record.sum())


def _initial_theta(dataset: LinkedDataset, config: EmConfig) -> Theta:
    if config.init == "user_supplied":
        if config.theta0 is None:
            raise ValueError("user_supplied init requires theta0")
        return config.theta0.copy()
    design = _outcome_design(dataset)
    ones = np.ones(dataset.n)
    beta_fit = glm.fit_wls(design, dataset.y, ones)
    p_x = dataset.p_x
    beta_x = beta_fit.coefficients[:p_x]
    beta_ex = beta_fit.coefficients[p_x:]
    phi_fit = glm.fit_logistic_weighted(dataset.x, dataset.e, ones)
    audit = dataset.audit_indices
    gamma = None
    if config.init == "audit_seeded" and audit.size:
        m_aud = dataset.m_audit[audit]
        if 0 < m_aud.sum() < m_aud.size:
            gfit = glm.fit_logistic_weighted(
                dataset.z[audit], m_aud, np.ones(audit.size))
            gamma = gfit.coefficients
    if gamma is None:
        gamma = np.zeros(dataset.p_z)
        gamma[0] = np.log(config.prior_h / (1.0 - config.prior_h))
    if config.sigma_known is not None:
        sigma = config.sigma_known
    else:
        sigma = np.sqrt(max(glm.residual_variance(
            design, dataset.y, ones, beta_fit.coefficients), 1e-6))
    return Theta(beta_x=beta_x, beta_ex=beta_ex, gamma=gamma,
                 phi=phi_fit.coefficients, sigma=sigma)


def _em_loop(dataset: LinkedDataset, config: EmConfig, theta: Theta):
    mode = config.mixture_mode
    scenario = dataset.scenario
    variant = mode.variant
    design = _outcome_design(dataset)
    ones = np.ones(dataset.n)
    estimate_sigma = config.sigma_known is None
    update_beta = variant not in ("e_only",)
    update_phi = variant not in ("y_fixed_phi",)
    phi_weighted = (scenario != Scenario.I) or variant == "e_only"
    if variant == "e_only":
        # exposure-only mixture: propensity weights always apply
        phi_weighted = scenario != Scenario.I

    trace = EmTrace()
    m_prev = None
    theta = theta.copy()
    if variant == "y_fixed_phi" and mode.fixed_phi is not None:
        theta.phi = np.asarray(mode.fixed_phi, dtype=float)
    if scenario == Scenario.I and update_phi and variant != "e_only":
        # mismatch error cannot contaminate the propensity fit: solve once
        phi_fit = glm.fit_logistic_weighted(dataset.x, dataset.e, ones,
                                            start=theta.phi)
        theta.phi = phi_fit.coefficients

    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        prev = _param_vector(theta, estimate_sigma)
        post = mixture.e_step(dataset, theta, mode)
        m_hat = post.values
        if variant == "e_only" and scenario == Scenario.I:
            m_hat = np.zeros(dataset.n)
        w = 1.0 - m_hat
        if w.sum() <= max(design.shape[1], dataset.p_x):
            raise DegenerateComponent(
                "posterior collapsed: weighted support is empty")
        if update_beta:
            beta_fit = glm.fit_wls(design, dataset.y, w)
            theta.beta_x = beta_fit.coefficients[:dataset.p_x]
            theta.beta_ex = beta_fit.coefficients[dataset.p_x:]
            if estimate_sigma:
                theta.sigma = float(np.sqrt(max(glm.residual_variance(
                    design, dataset.y, w, beta_fit.coefficients), 1e-8)))
        if update_phi and (scenario != Scenario.I or variant == "e_only"):
            phi_fit = glm.fit_logistic_weighted(
                dataset.x, dataset.e, w if phi_weighted else ones,
                start=theta.phi)
            theta.phi = phi_fit.coefficients
        gamma_fit = glm.fit_logistic_weighted(dataset.z, m_hat, ones,
                                              start=theta.gamma)
        theta.gamma = gamma_fit.coefficients

        cur = _param_vector(theta, estimate_sigma)
        delta = float(np.max(np.abs(cur - prev)))
        dm = (float(np.max(np.abs(m_hat - m_prev)))
              if m_prev is not None else np.inf)
        m_prev = m_hat
        trace.params.append(cur)
        trace.loglik.append(observed_loglik(dataset, theta, mode))
        trace.max_posterior_change.append(dm)
        if delta <= config.param_tol:
            converged = True
            break
    trace.converged = converged
    trace.iterations = it
    final_post = mixture.e_step(dataset, theta, mode)
    return theta, final_post, trace


def run_em(dataset: LinkedDataset, config: EmConfig | None = None):
    """Solve the scenario's estimating equations; returns (theta, m_hat, trace)."""
    if config is None:
        config = EmConfig()
    theta0 = _initial_theta(dataset, config)
    theta, post, trace = _em_loop(dataset, config, theta0)
    no_audit = dataset.audit_indices.size == 0
    if no_audit and float(np.mean(post.values)) > 0.5:
        # mixture label-swap guard: restart from a low prior mismatch rate
        alt_cfg = EmConfig(
            max_iter=config.max_iter, param_tol=config.param_tol,
            init="prior_h", sigma_known=config.sigma_known,
            mixture_mode=config.mixture_mode, prior_h=0.05)
        alt_theta0 = _initial_theta(dataset, alt_cfg)
        alt = _em_loop(dataset, alt_cfg, alt_theta0)
        if observed_loglik(dataset, alt[0], config.mixture_mode) > \
                observed_loglik(dataset, theta, config.mixture_mode):
            theta, post, trace = alt
    if not trace.converged and config.raise_on_nonconvergence:
        raise NonConvergence(f"EM did not converge in {trace.iterations} iterations")
    return theta, post, trace


@dataclass
class AuditWorkflowResult:
    theta: Theta
    m_hat_phi: MismatchPosterior
    m_hat_beta: MismatchPosterior
    converged: bool
    iterations: int
    # uniform-weight (marginal) mismatch components used by each chain
    uniform_phi: bool = False
    uniform_beta: bool = False

    @property
    def beta_mode(self) -> MixtureMode:
        return MixtureMode(variant="audit_beta",
                           uniform_mismatch_weights=self.uniform_beta)


def fit_gamma_audit(dataset: LinkedDataset) -> np.ndarray:
    """Logistic fit of the observed audit match status on z."""
    audit = dataset.audit_indices
    if audit.size == 0:
        raise ValueError("audit sample is empty")
    m_aud = dataset.m_audit[audit]
    if m_aud.sum() in (0, m_aud.size):
        raise ValueError("audit sample contains a single match-status class")
    fit = glm.fit_logistic_weighted(dataset.z[audit], m_aud, np.ones(audit.size))
    return fit.coefficients


def phi_posterior(dataset: LinkedDataset, theta: Theta,
                  uniform: bool = False) -> MismatchPosterior:
    """Posterior used by the exposure-only mixture (zero in Scenario I)."""
    if dataset.scenario == Scenario.I:
        m = np.zeros(dataset.n)
        audited = dataset.in_audit
        m[audited] = dataset.m_audit[audited]
        return MismatchPosterior(values=m)
    log_f1, log_f0 = mixture.component_logdensities(
        dataset, theta,
        MixtureMode(variant="e_only", uniform_mismatch_weights=uniform))
    return mixture.posterior_from_logdensities(dataset, theta, log_f1, log_f0)


def beta_posterior(dataset: LinkedDataset, theta: Theta,
                   uniform: bool = False) -> MismatchPosterior:
    """Posterior used by the outcome-only mixture of the audit workflow."""
    log_f1, log_f0 = mixture.component_logdensities(
        dataset, theta,
        MixtureMode(variant="audit_beta", uniform_mismatch_weights=uniform))
    return mixture.posterior_from_logdensities(dataset, theta, log_f1, log_f0)


def run_audit_workflow(dataset: LinkedDataset, max_iter: int = 200,
                       param_tol: float = 1e-6,
                       sigma_known: float | None = 1.0,
                       phi_override: np.ndarray | None = None,
                       marginal_mismatch_component: bool = False) -> AuditWorkflowResult:
    """Audit-anchored estimation: gamma from the audit sample, then
    alternating fits for the propensity and outcome parameters with their
    own mismatch posteriors.

    ``marginal_mismatch_component=True`` deliberately misspecifies the
    mismatch components of both chains as marginal densities (uniform
    weights) where the scenario admits it: the outcome chain in Scenarios I
    and II, and the exposure chain in Scenario II.
    """
    gamma = fit_gamma_audit(dataset)
    uniform_phi = (marginal_mismatch_component
                   and dataset.scenario == Scenario.II)
    uniform_beta = (marginal_mismatch_component
                    and dataset.scenario in (Scenario.I, Scenario.II))
    design = _outcome_design(dataset)
    ones = np.ones(dataset.n)
    beta_fit = glm.fit_wls(design, dataset.y, ones)
    sigma = sigma_known
    if sigma is None:
        sigma = float(np.sqrt(max(glm.residual_variance(
            design, dataset.y, ones, beta_fit.coefficients), 1e-8)))
    theta = Theta(beta_x=beta_fit.coefficients[:dataset.p_x],
                  beta_ex=beta_fit.coefficients[dataset.p_x:],
                  gamma=gamma,
                  phi=glm.fit_logistic_weighted(
                      dataset.x, dataset.e, ones).coefficients,
                  sigma=sigma)

    converged_phi = True
    it_phi = 0
    if phi_override is not None:
        theta.phi = np.asarray(phi_override, dtype=float)
    elif dataset.scenario == Scenario.I:
        it_phi = 1
    else:
        converged_phi = False
        for it_phi in range(1, max_iter + 1):
            m_phi = phi_posterior(dataset, theta, uniform=uniform_phi).values
            fit = glm.fit_logistic_weighted(dataset.x, dataset.e, 1.0 - m_phi,
                                            start=theta.phi)
            delta = float(np.max(np.abs(fit.coefficients - theta.phi)))
            theta.phi = fit.coefficients
            if delta <= param_tol:
                converged_phi = True
                break

    converged_beta = False
    it_beta = 0
    for it_beta in range(1, max_iter + 1):
        m_beta = beta_posterior(dataset, theta, uniform=uniform_beta).values
        fit = glm.fit_wls(design, dataset.y, 1.0 - m_beta)
        new_bx = fit.coefficients[:dataset.p_x]
        new_bex = fit.coefficients[dataset.p_x:]
        delta = float(max(np.max(np.abs(new_bx - theta.beta_x)),
                          np.max(np.abs(new_bex - theta.beta_ex))))
        theta.beta_x, theta.beta_ex = new_bx, new_bex
        if sigma_known is None:
            theta.sigma = float(np.sqrt(max(glm.residual_variance(
                design, dataset.y, 1.0 - m_beta, fit.coefficients), 1e-8)))
        if delta <= param_tol:
            converged_beta = True
            break
    m_phi_final = phi_posterior(dataset, theta, uniform=uniform_phi)
    m_beta_final = beta_posterior(dataset, theta, uniform=uniform_beta)
    return AuditWorkflowResult(
        theta=theta, m_hat_phi=m_phi_final, m_hat_beta=m_beta_final,
        converged=converged_phi and converged_beta,
        iterations=it_phi + it_beta,
        uniform_phi=uniform_phi, uniform_beta=uniform_beta)

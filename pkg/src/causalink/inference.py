"""Sandwich covariance for the stacked estimating equations with latent
match-status indicators.

The stacked Jacobian has block form [[A, B], [C, -I]] where A collects the
parameter-score derivatives, B the sensitivity of parameter scores to the
imputed indicators, and C the sensitivity of the posterior map to the
parameters. The parameter block of the inverse is S^{-1} with S = A + B C,
so the covariance never touches the (n+d)-dimensional matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import em_engine, mixture
from .data_model import LinkedDataset, Scenario, Theta

CLIP = 1e-3


class SingularSchur(Exception):
    pass


class NegativeVariance(Exception):
    pass


def clip_unit(v):
    return np.clip(v, CLIP, 1.0 - CLIP)


def clip_count(v) -> int:
    v = np.asarray(v)
    return int(np.sum((v < CLIP) | (v > 1.0 - CLIP)))


@dataclass
class LambdaSpec:
    lambda1: int = 1
    lambda2: int = 1
    lambda3: int = 1

    def __post_init__(self):
        for v in (self.lambda1, self.lambda2, self.lambda3):
            if v not in (0, 1):
                raise ValueError("lambda flags must be 0 or 1")

    @classmethod
    def outcome(cls):
        return cls(1, 0, 0)

    @classmethod
    def ps(cls):
        return cls(0, 1, 0)

    @classmethod
    def dr(cls):
        return cls(1, 1, 1)

    @property
    def label(self) -> str:
        key = (self.lambda1, self.lambda2, self.lambda3)
        return {(1, 0, 0): "o", (0, 1, 0): "ps", (1, 1, 1): "dr"}.get(
            key, f"lambda{key}")


@dataclass
class JacobianBlocks:
    A: np.ndarray
    B: np.ndarray | None
    C: np.ndarray | None

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def n_latent(self) -> int:
        return 0 if self.B is None else self.B.shape[1]


# --- normal quantiles without a statistics library ------------------------

_ACKLAM_A = (-3.969683028665376e+01, 2.209460984245205e+02,
             -2.759285104469687e+02, 1.383577518672690e+02,
             -3.066479806614716e+01, 2.506628277459239e+00)
_ACKLAM_B = (-5.447609879822406e+01, 1.615858368580409e+02,
             -1.556989798598866e+02, 6.680131188771972e+01,
             -1.328068155288572e+01)
_ACKLAM_C = (-7.784894002430293e-03, -3.223964580411365e-01,
             -2.400758277161838e+00, -2.549732539343734e+00,
             4.374664141464968e+00, 2.938163982698783e+00)
_ACKLAM_D = (7.784695709041462e-03, 3.224671290700398e-01,
             2.445134137142996e+00, 3.754408661907416e+00)


def norm_quantile(p: float) -> float:
    """Inverse standard-normal CDF via rational approximation plus one
    Halley refinement (absolute error far below 1e-9)."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile argument must lie in (0, 1)")
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    p_low, p_high = 0.02425, 1 - 0.02425
    if p < p_low:
        q = math.sqrt(-2 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log(1 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    # Halley steps on Phi(x) - p = 0; evaluate the residual through the
    # shorter tail so the subtraction never cancels (1 - p is exact for
    # p >= 0.5 and p itself is the lower-tail mass otherwise)
    for _ in range(2):
        if p > 0.5:
            e = 0.5 * math.erfc(x / math.sqrt(2)) - (1.0 - p)
            e = -e
        else:
            e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
        u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
        x = x - u / (1 + x * u / 2)
    return x


def confidence_interval(tau_hat: float, variance: float,
                        level: float = 0.95) -> tuple[float, float]:
    if variance < 0:
        raise NegativeVariance(f"variance {variance} is negative")
    se = math.sqrt(variance)
    zq = norm_quantile(0.5 * (1.0 + level))
    return tau_hat - zq * se, tau_hat + zq * se


# --- lambda-family stacked system -----------------------------------------

def _slices(p: int, q: int):
    bx = slice(0, p)
    bex = slice(p, 2 * p)
    g = slice(2 * p, 2 * p + q)
    ph = slice(2 * p + q, 3 * p + q)
    t = 3 * p + q
    return bx, bex, g, ph, t


def param_dim(dataset: LinkedDataset) -> int:
    return 3 * dataset.p_x + dataset.p_z + 1


def theta_to_vector(theta: Theta) -> np.ndarray:
    return np.concatenate([theta.beta_x, theta.beta_ex, theta.gamma,
                           theta.phi, [theta.tau]])


def vector_to_theta(vec: np.ndarray, p: int, q: int, sigma: float) -> Theta:
    bx, bex, g, ph, t = _slices(p, q)
    return Theta(beta_x=vec[bx], beta_ex=vec[bex], gamma=vec[g],
                 phi=vec[ph], sigma=sigma, tau=float(vec[t]))


def tau_record_terms(dataset: LinkedDataset, theta: Theta, m_hat: np.ndarray,
                     lam: LambdaSpec):
    """Per-record pieces of the ATE estimating equation.

    Returns (outcome contrast, weighted bracket b_i, clip diagnostics); the
    equation reads lam1 * contrast + lam2 * (1 - m) * b - tau per record.
    """
    mu1 = theta.mu1(dataset.x)
    mu0 = theta.mu0(dataset.x)
    p_raw = theta.propensity(dataset.x)
    omh_raw = 1.0 - theta.mismatch_prob(dataset.z)
    n_clip = clip_count(p_raw) + clip_count(omh_raw)
    p = clip_unit(p_raw)
    omh = clip_unit(omh_raw)
    e = dataset.e
    y = dataset.y
    b = (e * (y - lam.lambda3 * mu1) / (omh * p)
         - (1 - e) * (y - lam.lambda3 * mu0) / (omh * (1.0 - p)))
    contrast = mu1 - mu0
    return contrast, b, n_clip


def lambda_scores(dataset: LinkedDataset, theta: Theta, m_hat: np.ndarray,
                  lam: LambdaSpec) -> np.ndarray:
    """Per-record stacked scores Q_{i,theta}, shape (n, d)."""
    n, p, q = dataset.n, dataset.p_x, dataset.p_z
    bx, bex, g, ph, t = _slices(p, q)
    d = 3 * p + q + 1
    scores = np.zeros((n, d))
    design = np.hstack([dataset.x, dataset.e[:, None] * dataset.x])
    resid = dataset.y - theta.mu_e(dataset.x, dataset.e)
    w = 1.0 - m_hat
    scores[:, 0:2 * p] = w[:, None] * design * resid[:, None]
    h = theta.mismatch_prob(dataset.z)
    scores[:, g] = dataset.z * (m_hat - h)[:, None]
    p_x = theta.propensity(dataset.x)
    w_phi = np.ones(n) if dataset.scenario == Scenario.I else w
    scores[:, ph] = w_phi[:, None] * dataset.x * (dataset.e - p_x)[:, None]
    contrast, b, _ = tau_record_terms(dataset, theta, m_hat, lam)
    scores[:, t] = (lam.lambda1 * contrast + lam.lambda2 * w * b - theta.tau)
    return scores


def _fd_posterior_jacobian(dataset, theta, mode, posterior_fn=None) -> np.ndarray:
    """Central finite differences of the E-step map w.r.t. theta (n x d).

    The tau column is zero (the posterior never reads tau); audit rows are
    zero because observed indicators are data, not estimates.
    """
    p, q = dataset.p_x, dataset.p_z
    d = 3 * p + q + 1
    if posterior_fn is None:
        def posterior_fn(th):
            return mixture.e_step(dataset, th, mode).values
    base = theta_to_vector(theta)
    C = np.zeros((dataset.n, d))
    for k in range(d - 1):  # tau column stays zero
        step = 1e-6 * (1.0 + abs(base[k]))
        up = base.copy()
        up[k] += step
        dn = base.copy()
        dn[k] -= step
        m_up = posterior_fn(vector_to_theta(up, p, q, theta.sigma))
        m_dn = posterior_fn(vector_to_theta(dn, p, q, theta.sigma))
        C[:, k] = (m_up - m_dn) / (2.0 * step)
    C[dataset.in_audit, :] = 0.0
    return C


def assemble_jacobian(dataset: LinkedDataset, theta: Theta, m_hat: np.ndarray,
                      lam: LambdaSpec,
                      mode: mixture.MixtureMode | None = None) -> JacobianBlocks:
    """Analytic A and B blocks plus finite-difference C for the lambda family."""
    if mode is None:
        mode = mixture.MixtureMode()
    n, p, q = dataset.n, dataset.p_x, dataset.p_z
    bx, bex, g, ph, t = _slices(p, q)
    d = 3 * p + q + 1
    x, z, e, y = dataset.x, dataset.z, dataset.e, dataset.y
    design = np.hstack([x, e[:, None] * x])
    w = 1.0 - m_hat
    h = theta.mismatch_prob(z)
    p_prob = theta.propensity(x)
    mu1 = theta.mu1(x)
    mu0 = theta.mu0(x)
    resid = y - theta.mu_e(x, e)
    scenario = dataset.scenario
    l1, l2, l3 = lam.lambda1, lam.lambda2, lam.lambda3

    A = np.zeros((d, d))
    A[0:2 * p, 0:2 * p] = -(design * w[:, None]).T @ design
    A[g, g] = -(z * (h * (1 - h))[:, None]).T @ z
    w_phi = np.ones(n) if scenario == Scenario.I else w
    A[ph, ph] = -(x * (w_phi * p_prob * (1 - p_prob))[:, None]).T @ x

    pc = clip_unit(p_prob)
    omhc = clip_unit(1.0 - h)
    t1 = e * w * (y - l3 * mu1) / (omhc * pc)
    t0 = (1 - e) * w * (y - l3 * mu0) / (omhc * (1.0 - pc))
    s = t1 - t0

    # tau row
    A[t, bex] = l1 * x.sum(axis=0)
    if l2 and l3:
        inv1 = e * w / (omhc * pc)
        inv0 = (1 - e) * w / (omhc * (1.0 - pc))
        A[t, bx] += l2 * l3 * ((-inv1 + inv0)[:, None] * x).sum(axis=0)
        A[t, bex] += l2 * l3 * ((-inv1)[:, None] * x).sum(axis=0)
    if l2:
        A[t, g] = l2 * ((s * h)[:, None] * z).sum(axis=0)
        A[t, ph] = l2 * (((-t1 * (1 - pc) - t0 * pc))[:, None] * x).sum(axis=0)
    A[t, t] = -float(n)

    B = np.zeros((d, n))
    B[0:2 * p, :] = -(design * resid[:, None]).T
    B[g, :] = z.T
    if scenario != Scenario.I:
        B[ph, :] = -(x * (e - p_prob)[:, None]).T
    if l2:
        b_full = (e * (y - l3 * mu1) / (omhc * pc)
                  - (1 - e) * (y - l3 * mu0) / (omhc * (1.0 - pc)))
        B[t, :] = -l2 * b_full

    C = _fd_posterior_jacobian(dataset, theta, mode)
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(B)) \
            or not np.all(np.isfinite(C)):
        raise FloatingPointError("non-finite entries in Jacobian blocks")
    return JacobianBlocks(A=A, B=B, C=C)


def sandwich_covariance(blocks: JacobianBlocks,
                        per_record_scores: np.ndarray) -> np.ndarray:
    """S^{-1} M S^{-T} with S = A + B C and M the score outer-product sum."""
    S = blocks.A.copy()
    if blocks.B is not None and blocks.C is not None and blocks.n_latent:
        S = S + blocks.B @ blocks.C
    M = per_record_scores.T @ per_record_scores
    try:
        T1 = np.linalg.solve(S, M)
        cov = np.linalg.solve(S, T1.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularSchur(str(exc))
    if not np.all(np.isfinite(cov)):
        raise SingularSchur("non-finite covariance")
    return 0.5 * (cov + cov.T)


def dense_inverse_covariance(blocks: JacobianBlocks,
                             per_record_scores: np.ndarray) -> np.ndarray:
    """Reference path materializing the full (n+d) Jacobian inverse."""
    d = blocks.d
    n = blocks.n_latent
    J = np.zeros((d + n, d + n))
    J[:d, :d] = blocks.A
    if n:
        J[:d, d:] = blocks.B
        J[d:, :d] = blocks.C
        J[d:, d:] = -np.eye(n)
    Jinv = np.linalg.inv(J)
    top = Jinv[:d, :d]
    M = per_record_scores.T @ per_record_scores
    return top @ M @ top.T


# --- stacked system for the audit-sample PS estimator ---------------------

def audit_ps_system(dataset: LinkedDataset, gamma: np.ndarray,
                    phi: np.ndarray, tau: float):
    """Scores and analytic Jacobian for (gamma, phi, tau) of the
    audit-sample PS estimator; no latent block."""
    n, p, q = dataset.n, dataset.p_x, dataset.p_z
    d = q + p + 1
    x, z, e, y = dataset.x, dataset.z, dataset.e, dataset.y
    in_a = dataset.in_audit.astype(float)
    m_obs = np.where(dataset.in_audit, dataset.m_audit, 0)
    h = expit(z @ gamma)
    p_prob = expit(x @ phi)
    pc = clip_unit(p_prob)
    omhc = clip_unit(1.0 - h)
    correct = in_a * (1 - m_obs)
    # scenario I fits phi on the full sample; II/III on audited correct links
    if dataset.scenario == Scenario.I:
        w_phi = np.ones(n)
    else:
        w_phi = correct
    u1 = correct * e * y / (omhc * pc)
    u0 = correct * (1 - e) * y / (omhc * (1.0 - pc))
    u = u1 - u0

    scores = np.zeros((n, d))
    g_sl = slice(0, q)
    ph_sl = slice(q, q + p)
    t_ix = q + p
    scores[:, g_sl] = (in_a * (np.where(dataset.in_audit, dataset.m_audit, 0) - h))[:, None] * z
    scores[:, ph_sl] = (w_phi * (e - p_prob))[:, None] * x
    scores[:, t_ix] = u - in_a * tau

    A = np.zeros((d, d))
    A[g_sl, g_sl] = -(z * (in_a * h * (1 - h))[:, None]).T @ z
    A[ph_sl, ph_sl] = -(x * (w_phi * p_prob * (1 - p_prob))[:, None]).T @ x
    A[t_ix, g_sl] = ((u * h)[:, None] * z).sum(axis=0)
    A[t_ix, ph_sl] = ((-u1 * (1 - pc) - u0 * pc)[:, None] * x).sum(axis=0)
    A[t_ix, t_ix] = -float(in_a.sum())
    return JacobianBlocks(A=A, B=None, C=None), scores


# --- stacked system for the audit-sample DR estimator ---------------------

def audit_dr_system(dataset: LinkedDataset, theta: Theta,
                    m_hat_phi: np.ndarray, m_hat_beta: np.ndarray):
    """Blocks and scores for (beta, gamma, phi, tau) of the audit DR
    estimator, with the two mismatch posteriors as latent variables."""
    n, p, q = dataset.n, dataset.p_x, dataset.p_z
    bx, bex, g, ph, t = _slices(p, q)
    d = 3 * p + q + 1
    x, z, e, y = dataset.x, dataset.z, dataset.e, dataset.y
    design = np.hstack([x, e[:, None] * x])
    in_a = dataset.in_audit.astype(float)
    n_a = in_a.sum()
    if n_a == 0:
        raise ValueError("audit sample is empty")
    r_a = n / n_a
    m_obs = np.where(dataset.in_audit, dataset.m_audit, 0)
    correct = in_a * (1 - m_obs)
    h = theta.mismatch_prob(z)
    p_prob = theta.propensity(x)
    pc = clip_unit(p_prob)
    omhc = clip_unit(1.0 - h)
    mu1 = theta.mu1(x)
    mu0 = theta.mu0(x)
    resid = y - theta.mu_e(x, e)
    w_b = 1.0 - m_hat_beta
    w_p = 1.0 - m_hat_phi

    v1 = correct * e * (y - mu1) / (omhc * pc)
    v0 = correct * (1 - e) * (y - mu0) / (omhc * (1.0 - pc))
    v = v1 - v0

    scores = np.zeros((n, d))
    scores[:, 0:2 * p] = w_b[:, None] * design * resid[:, None]
    scores[:, g] = (in_a * (m_obs - h))[:, None] * z
    if dataset.scenario == Scenario.I:
        scores[:, ph] = x * (e - p_prob)[:, None]
        w_phi_eff = np.ones(n)
    else:
        scores[:, ph] = w_p[:, None] * x * (e - p_prob)[:, None]
        w_phi_eff = w_p
    scores[:, t] = (mu1 - mu0) + r_a * v - theta.tau

    A = np.zeros((d, d))
    A[0:2 * p, 0:2 * p] = -(design * w_b[:, None]).T @ design
    A[g, g] = -(z * (in_a * h * (1 - h))[:, None]).T @ z
    A[ph, ph] = -(x * (w_phi_eff * p_prob * (1 - p_prob))[:, None]).T @ x
    inv1 = correct * e / (omhc * pc)
    inv0 = correct * (1 - e) / (omhc * (1.0 - pc))
    A[t, bx] = r_a * ((-inv1 + inv0)[:, None] * x).sum(axis=0)
    A[t, bex] = x.sum(axis=0) + r_a * ((-inv1)[:, None] * x).sum(axis=0)
    A[t, g] = r_a * ((v * h)[:, None] * z).sum(axis=0)
    A[t, ph] = r_a * ((-v1 * (1 - pc) - v0 * pc)[:, None] * x).sum(axis=0)
    A[t, t] = -float(n)

    B = np.zeros((d, 2 * n))
    if dataset.scenario != Scenario.I:
        B[ph, 0:n] = -(x * (e - p_prob)[:, None]).T
    B[0:2 * p, n:2 * n] = -(design * resid[:, None]).T

    # finite differences of the two posterior maps
    C = np.zeros((2 * n, d))

    def phi_map(th):
        return em_engine.phi_posterior(dataset, th).values

    def beta_map(th):
        return em_engine.beta_posterior(dataset, th).values

    base = theta_to_vector(theta)
    for k in range(d - 1):
        step = 1e-6 * (1.0 + abs(base[k]))
        up = base.copy()
        up[k] += step
        dn = base.copy()
        dn[k] -= step
        th_up = vector_to_theta(up, p, q, theta.sigma)
        th_dn = vector_to_theta(dn, p, q, theta.sigma)
        C[0:n, k] = (phi_map(th_up) - phi_map(th_dn)) / (2 * step)
        C[n:2 * n, k] = (beta_map(th_up) - beta_map(th_dn)) / (2 * step)
    aud = dataset.in_audit
    C[0:n, :][aud, :] = 0.0
    C[n:2 * n, :][aud, :] = 0.0
    return JacobianBlocks(A=A, B=B, C=C), scores


# --- stacked system for lambda estimators on the two-chain fit -------------

def audit_lambda_system(dataset: LinkedDataset, theta: Theta,
                        m_hat_phi: np.ndarray, m_hat_beta: np.ndarray,
                        lam: LambdaSpec, uniform_phi: bool = False,
                        uniform_beta: bool = False):
    """Blocks and scores for a lambda-family estimator whose nuisances come
    from the audit-anchored two-chain fit: gamma solves the audit logistic,
    phi the exposure chain (weights 1 - m_hat_phi), beta the outcome chain
    (weights 1 - m_hat_beta), and the ATE equation uses m_hat_beta."""
    n, p, q = dataset.n, dataset.p_x, dataset.p_z
    bx, bex, g, ph, t = _slices(p, q)
    d = 3 * p + q + 1
    x, z, e, y = dataset.x, dataset.z, dataset.e, dataset.y
    design = np.hstack([x, e[:, None] * x])
    in_a = dataset.in_audit.astype(float)
    if in_a.sum() == 0:
        raise ValueError("audit sample is empty")
    m_obs = np.where(dataset.in_audit, dataset.m_audit, 0)
    h = theta.mismatch_prob(z)
    p_prob = theta.propensity(x)
    pc = clip_unit(p_prob)
    omhc = clip_unit(1.0 - h)
    mu1 = theta.mu1(x)
    mu0 = theta.mu0(x)
    resid = y - theta.mu_e(x, e)
    w_b = 1.0 - m_hat_beta
    w_p = 1.0 - m_hat_phi
    l1, l2, l3 = lam.lambda1, lam.lambda2, lam.lambda3

    contrast, b, _ = tau_record_terms(dataset, theta, m_hat_beta, lam)

    scores = np.zeros((n, d))
    scores[:, 0:2 * p] = w_b[:, None] * design * resid[:, None]
    scores[:, g] = (in_a * (m_obs - h))[:, None] * z
    if dataset.scenario == Scenario.I:
        scores[:, ph] = x * (e - p_prob)[:, None]
        w_phi_eff = np.ones(n)
    else:
        scores[:, ph] = w_p[:, None] * x * (e - p_prob)[:, None]
        w_phi_eff = w_p
    scores[:, t] = l1 * contrast + l2 * w_b * b - theta.tau

    A = np.zeros((d, d))
    A[0:2 * p, 0:2 * p] = -(design * w_b[:, None]).T @ design
    A[g, g] = -(z * (in_a * h * (1 - h))[:, None]).T @ z
    A[ph, ph] = -(x * (w_phi_eff * p_prob * (1 - p_prob))[:, None]).T @ x
    t1 = e * w_b * (y - l3 * mu1) / (omhc * pc)
    t0 = (1 - e) * w_b * (y - l3 * mu0) / (omhc * (1.0 - pc))
    s = t1 - t0
    A[t, bex] = l1 * x.sum(axis=0)
    if l2 and l3:
        inv1 = e * w_b / (omhc * pc)
        inv0 = (1 - e) * w_b / (omhc * (1.0 - pc))
        A[t, bx] += l2 * l3 * ((-inv1 + inv0)[:, None] * x).sum(axis=0)
        A[t, bex] += l2 * l3 * ((-inv1)[:, None] * x).sum(axis=0)
    if l2:
        A[t, g] = l2 * ((s * h)[:, None] * z).sum(axis=0)
        A[t, ph] = l2 * (((-t1 * (1 - pc) - t0 * pc))[:, None] * x).sum(axis=0)
    A[t, t] = -float(n)

    B = np.zeros((d, 2 * n))
    if dataset.scenario != Scenario.I:
        B[ph, 0:n] = -(x * (e - p_prob)[:, None]).T
    B[0:2 * p, n:2 * n] = -(design * resid[:, None]).T
    if l2:
        b_full = (e * (y - l3 * mu1) / (omhc * pc)
                  - (1 - e) * (y - l3 * mu0) / (omhc * (1.0 - pc)))
        B[t, n:2 * n] = -l2 * b_full

    C = np.zeros((2 * n, d))

    def phi_map(th):
        return em_engine.phi_posterior(dataset, th, uniform=uniform_phi).values

    def beta_map(th):
        return em_engine.beta_posterior(dataset, th, uniform=uniform_beta).values

    base = theta_to_vector(theta)
    for k in range(d - 1):
        step = 1e-6 * (1.0 + abs(base[k]))
        up = base.copy()
        up[k] += step
        dn = base.copy()
        dn[k] -= step
        th_up = vector_to_theta(up, p, q, theta.sigma)
        th_dn = vector_to_theta(dn, p, q, theta.sigma)
        C[0:n, k] = (phi_map(th_up) - phi_map(th_dn)) / (2 * step)
        C[n:2 * n, k] = (beta_map(th_up) - beta_map(th_dn)) / (2 * step)
    aud2 = dataset.in_audit
    C[0:n, :][aud2, :] = 0.0
    C[n:2 * n, :][aud2, :] = 0.0
    return JacobianBlocks(A=A, B=B, C=C), scores

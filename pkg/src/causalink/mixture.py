"""Mismatch-component densities and the posterior over latent match status.

Each scenario pairs a correct-match density f0 (the working outcome and
propensity models evaluated at the record's own covariates) with a mismatch
component f1 built from the empirical distribution of the other records,
weighted by w(z_j) = h(z_j) / sum_k h(z_k). The posterior mismatch
probability of a record is the Bayes ratio

    m_i = h_i f1_i / (h_i f1_i + (1 - h_i) f0_i),

evaluated in log-space throughout. Audit records keep their observed status.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .data_model import LinkedDataset, MismatchPosterior, Scenario, Theta

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# above this many (query x component) pairs the shared-component mixtures
# are evaluated on a grid via FFT-free binned convolution
_EXACT_LIMIT = 4_000_000
_GRID_MAX = 16384


class DegenerateWeights(Exception):
    pass


class ZeroDenominator(Exception):
    pass


@dataclass
class OracleDensityTable:
    """Tabulated mismatch-component density, linearly interpolated.

    ``slots`` maps an exposure value (or None for exposure-free components)
    to a (grid, density) pair.
    """

    slots: dict = field(default_factory=dict)

    def evaluate(self, y, e=None):
        key = None if e is None else int(e)
        grid, dens = self.slots[key]
        return np.interp(y, grid, dens, left=0.0, right=0.0)

    def to_csv(self) -> str:
        lines = ["e,y,density"]
        for key, (grid, dens) in self.slots.items():
            tag = "" if key is None else str(int(key))
            for g, d in zip(grid, dens):
                lines.append(f"{tag},{float(g)!r},{float(d)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "OracleDensityTable":
        rows: dict = {}
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if lines and lines[0].lower().startswith("e,"):
            lines = lines[1:]
        for ln in lines:
            e_s, y_s, d_s = [p.strip() for p in ln.split(",")]
            key = None if e_s == "" else int(e_s)
            rows.setdefault(key, []).append((float(y_s), float(d_s)))
        slots = {}
        for key, pairs in rows.items():
            pairs.sort()
            grid = np.array([p[0] for p in pairs])
            dens = np.array([p[1] for p in pairs])
            slots[key] = (grid, dens)
        return cls(slots=slots)


@dataclass
class MixtureMode:
    """How the mismatch component of the mixture is formed.

    ``full`` evaluates it from the current parameter iterate,
    ``reduced_no_ps`` drops the propensity factors (misspecification-robust
    reduced form), and ``oracle_fixed`` holds the component fixed at supplied
    reference parameters and/or a tabulated density. The remaining variants
    are internal to the misspecification workflows: ``misspec_marginal``
    replaces the w-weighted component by the unweighted marginal,
    ``e_only`` fits the exposure-only mixture, and ``y_fixed_phi`` fits the
    outcome mixture with a frozen propensity parameter.

    ``uniform_mismatch_weights`` swaps the mismatch-tilted record weights of
    the ``e_only`` and ``audit_beta`` components for uniform ones, turning
    the conditional mismatch density into the plain marginal over all
    records (a deliberate misspecification). It has no effect in
    Scenario III, whose mismatch component is not a record-weighted mixture.
    """

    variant: str = "full"
    oracle_density: OracleDensityTable | None = None
    oracle_theta: Theta | None = None
    fixed_phi: np.ndarray | None = None
    uniform_mismatch_weights: bool = False
    # memo for the fixed-reference mismatch component, which never changes
    # across iterates of the same dataset: id -> (dataset, log_f1)
    _f1_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        known = {"full", "reduced_no_ps", "oracle_fixed", "misspec_marginal",
                 "e_only", "y_fixed_phi", "audit_beta"}
        if self.variant not in known:
            raise ValueError(f"unknown mixture variant {self.variant!r}")
        if self.variant == "oracle_fixed":
            if self.oracle_density is None and self.oracle_theta is None:
                raise ValueError("oracle_fixed requires a density table or "
                                 "reference parameters")


def log_expit(u):
    u = np.asarray(u, dtype=float)
    return -np.logaddexp(0.0, -u)


def _log_norm_pdf(resid, sigma):
    return -0.5 * (np.asarray(resid) / sigma) ** 2 - np.log(sigma) - _LOG_SQRT_2PI


def weights_w(dataset: LinkedDataset, gamma) -> np.ndarray:
    """Normalized mismatch-model weights h(z_i) / sum_j h(z_j)."""
    h = expit(dataset.z @ np.asarray(gamma, dtype=float))
    s = h.sum()
    if not s > 0:
        raise DegenerateWeights("all mismatch-model weights vanish")
    return h / s


def _log_weights_w(dataset: LinkedDataset, gamma) -> np.ndarray:
    u = dataset.z @ np.asarray(gamma, dtype=float)
    log_h = log_expit(u)
    log_s = logsumexp(log_h)
    if log_s == -np.inf:
        raise DegenerateWeights("all mismatch-model weights vanish")
    return log_h - log_s


def _log_mixture(queries, comp_mu, log_w, sigma, allow_grid=True):
    """log sum_j exp(log_w_j) * phi_sigma(y - mu_j) for each query y.

    Shared components across queries; large instances are evaluated by
    binning the component masses onto a fine grid, convolving with the
    Gaussian kernel, and interpolating the log-density.
    """
    queries = np.asarray(queries, dtype=float).ravel()
    comp_mu = np.asarray(comp_mu, dtype=float).ravel()
    log_w = np.asarray(log_w, dtype=float).ravel()
    nq, nc = queries.size, comp_mu.size
    if nq == 0:
        return np.empty(0)
    if not allow_grid or nq * nc <= _EXACT_LIMIT:
        out = np.empty(nq)
        chunk = max(1, _EXACT_LIMIT // max(nc, 1))
        for lo in range(0, nq, chunk):
            sl = slice(lo, min(lo + chunk, nq))
            mat = log_w[None, :] + _log_norm_pdf(
                queries[sl, None] - comp_mu[None, :], sigma)
            out[sl] = logsumexp(mat, axis=1)
        return out
    # grid path: bin component weights, convolve with the Gaussian kernel
    finite = log_w > -np.inf
    mu_f = comp_mu[finite]
    w_f = np.exp(log_w[finite])
    pad = 9.0 * sigma
    lo = min(queries.min(), mu_f.min()) - pad
    hi = max(queries.max(), mu_f.max()) + pad
    spacing = sigma / 64.0
    npts = int(np.ceil((hi - lo) / spacing)) + 1
    if npts > _GRID_MAX:
        npts = _GRID_MAX
        spacing = (hi - lo) / (npts - 1)
    grid = lo + spacing * np.arange(npts)
    # linear (two-point) splitting of each component mass onto the grid
    pos = (mu_f - lo) / spacing
    i0 = np.clip(pos.astype(int), 0, npts - 2)
    frac = pos - i0
    mass = np.zeros(npts)
    np.add.at(mass, i0, w_f * (1.0 - frac))
    np.add.at(mass, i0 + 1, w_f * frac)
    half = int(np.ceil(8.0 * sigma / spacing))
    kern = np.exp(_log_norm_pdf(spacing * np.arange(-half, half + 1), sigma))
    dens = np.convolve(mass, kern, mode="same")
    log_dens = np.log(np.maximum(dens, 1e-300))
    return np.interp(queries, grid, log_dens)


def _mu_components(dataset, theta):
    mu0 = theta.mu0(dataset.x)
    mu1 = theta.mu1(dataset.x)
    mu_own = np.where(dataset.e == 1, mu1, mu0)
    return mu0, mu1, mu_own


def mismatch_density_I(y, dataset: LinkedDataset, theta: Theta):
    """Scenario I mismatch component: n-term normal mixture in y."""
    log_w = _log_weights_w(dataset, theta.gamma)
    _, _, mu_own = _mu_components(dataset, theta)
    res = np.exp(_log_mixture(y, mu_own, log_w, theta.sigma, allow_grid=False))
    return float(res[0]) if np.isscalar(y) else res


def mismatch_density_II(y, e, dataset: LinkedDataset, theta: Theta):
    """Scenario II mismatch component: joint density-mass in (y, e)."""
    log_w = _log_weights_w(dataset, theta.gamma)
    mu0, mu1, _ = _mu_components(dataset, theta)
    u = dataset.x @ theta.phi
    e = int(e)
    comp_mu = mu1 if e == 1 else mu0
    log_p_factor = log_expit(u) if e == 1 else log_expit(-u)
    res = np.exp(_log_mixture(y, comp_mu, log_w + log_p_factor, theta.sigma,
                              allow_grid=False))
    return float(res[0]) if np.isscalar(y) else res


def exposure_mass_mismatch(dataset: LinkedDataset, theta: Theta, e,
                           uniform: bool = False) -> float:
    """P(E = e | M = 1) = sum_j p(x_j)^e (1-p(x_j))^(1-e) w(z_j).

    With ``uniform=True`` the w weights are replaced by 1/n, giving the
    unconditional exposure mass instead.
    """
    if uniform:
        log_w = np.full(dataset.n, -np.log(dataset.n))
    else:
        log_w = _log_weights_w(dataset, theta.gamma)
    u = dataset.x @ theta.phi
    log_p_factor = log_expit(u) if int(e) == 1 else log_expit(-u)
    return float(np.exp(logsumexp(log_w + log_p_factor)))


def mismatch_density_III(y, e, x_i, dataset: LinkedDataset, theta: Theta):
    """Scenario III mismatch component factors (f_y at x_i, P(E=e|M=1))."""
    x_i = np.asarray(x_i, dtype=float)
    p_i = float(expit(x_i @ theta.phi))
    mu1_i = float(x_i @ (theta.beta_x + theta.beta_ex))
    mu0_i = float(x_i @ theta.beta_x)
    f_y = (np.exp(_log_norm_pdf(np.asarray(y) - mu1_i, theta.sigma)) * p_i
           + np.exp(_log_norm_pdf(np.asarray(y) - mu0_i, theta.sigma)) * (1 - p_i))
    p_e = exposure_mass_mismatch(dataset, theta, e)
    return f_y, p_e


def mismatch_density_misspec_II(y, e, dataset: LinkedDataset, theta: Theta):
    """Scenario II conditional mismatch density f_{Y|E=e,M=1} with
    propensity-tilted weights (audit misspecification workflow)."""
    u = dataset.x @ theta.phi
    e = int(e)
    log_h = log_expit(dataset.z @ theta.gamma)
    log_p_factor = log_expit(u) if e == 1 else log_expit(-u)
    log_num = log_h + log_p_factor
    log_den = logsumexp(log_num)
    if log_den == -np.inf:
        raise DegenerateWeights("tilted mismatch weights vanish")
    mu0, mu1, _ = _mu_components(dataset, theta)
    comp_mu = mu1 if e == 1 else mu0
    res = np.exp(_log_mixture(y, comp_mu, log_num - log_den, theta.sigma,
                              allow_grid=False))
    return float(res[0]) if np.isscalar(y) else res


def _split_by_exposure(dataset, queries, comp_mu_by_e, log_w_by_e, sigma):
    """Evaluate per-record mixtures whose components depend on the record's
    own exposure value; one shared-component mixture per exposure arm."""
    out = np.empty(dataset.n)
    for e_val in (0, 1):
        sel = dataset.e == e_val
        if not np.any(sel):
            continue
        out[sel] = _log_mixture(queries[sel], comp_mu_by_e[e_val],
                                log_w_by_e[e_val], sigma)
    return out


def component_logdensities(dataset: LinkedDataset, theta: Theta,
                           mode: MixtureMode):
    """Per-record (log f1, log f0) of the scenario's two-component mixture."""
    scenario = dataset.scenario
    sigma = theta.sigma
    mu0, mu1, mu_own = _mu_components(dataset, theta)
    u = dataset.x @ theta.phi
    log_p_own = np.where(dataset.e == 1, log_expit(u), log_expit(-u))
    log_phi0 = _log_norm_pdf(dataset.y - mu_own, sigma)

    variant = mode.variant
    if variant == "e_only":
        log_f0 = log_p_own
        uni = mode.uniform_mismatch_weights
        log_f1 = np.where(
            dataset.e == 1,
            np.log(max(exposure_mass_mismatch(dataset, theta, 1, uniform=uni),
                       1e-300)),
            np.log(max(exposure_mass_mismatch(dataset, theta, 0, uniform=uni),
                       1e-300)))
        return log_f1, log_f0

    if variant == "y_fixed_phi":
        theta_phi = theta.copy()
        theta_phi.phi = np.asarray(mode.fixed_phi, dtype=float)
        p_fixed = expit(dataset.x @ theta_phi.phi)
        log_c1 = _log_norm_pdf(dataset.y - mu1, sigma)
        log_c0 = _log_norm_pdf(dataset.y - mu0, sigma)
        log_f1 = np.logaddexp(log_c1 + np.log(np.maximum(p_fixed, 1e-300)),
                              log_c0 + np.log(np.maximum(1 - p_fixed, 1e-300)))
        return log_f1, log_phi0

    if variant == "audit_beta":
        # outcome-only mixture of the audit workflow: f0 is the working
        # outcome density, f1 the scenario's conditional mismatch density
        # with the record's own exposure plugged in
        log_f0 = log_phi0
        if scenario == Scenario.I:
            if mode.uniform_mismatch_weights:
                log_w = np.full(dataset.n, -np.log(dataset.n))
            else:
                log_w = _log_weights_w(dataset, theta.gamma)
            log_f1 = _log_mixture(dataset.y, mu_own, log_w, sigma)
        elif scenario == Scenario.II:
            log_h = log_expit(dataset.z @ theta.gamma)
            log_f1 = np.empty(dataset.n)
            for e_val in (0, 1):
                sel = dataset.e == e_val
                if not np.any(sel):
                    continue
                log_pf = log_expit(u) if e_val == 1 else log_expit(-u)
                log_num = log_pf if mode.uniform_mismatch_weights \
                    else log_h + log_pf
                log_we = log_num - logsumexp(log_num)
                comp_mu = mu1 if e_val == 1 else mu0
                log_f1[sel] = _log_mixture(dataset.y[sel], comp_mu, log_we, sigma)
        else:
            p_x = expit(u)
            log_c1 = _log_norm_pdf(dataset.y - mu1, sigma)
            log_c0 = _log_norm_pdf(dataset.y - mu0, sigma)
            log_f1 = np.logaddexp(
                log_c1 + np.log(np.maximum(p_x, 1e-300)),
                log_c0 + np.log(np.maximum(1 - p_x, 1e-300)))
        return log_f1, log_f0

    # reference parameters for the mismatch component
    ref = theta
    table = None
    if variant == "oracle_fixed":
        table = mode.oracle_density
        if mode.oracle_theta is not None:
            ref = mode.oracle_theta
        # the fixed-reference component is constant across iterates, so
        # compute it once per dataset
        log_f0 = log_phi0 if scenario == Scenario.I else log_phi0 + log_p_own
        cached = mode._f1_cache.get(id(dataset))
        if cached is not None and cached[0] is dataset:
            return cached[1], log_f0
        log_f1 = _fixed_reference_f1(dataset, ref, table)
        if len(mode._f1_cache) > 8:
            mode._f1_cache.clear()
        mode._f1_cache[id(dataset)] = (dataset, log_f1)
        return log_f1, log_f0

    if scenario == Scenario.I:
        log_f0 = log_phi0
        if table is not None:
            log_f1 = np.log(np.maximum(table.evaluate(dataset.y), 1e-300))
        else:
            log_w = _log_weights_w(dataset, ref.gamma)
            if variant == "misspec_marginal":
                log_w = np.full(dataset.n, -np.log(dataset.n))
            _, _, mu_own_ref = _mu_components(dataset, ref)
            log_f1 = _log_mixture(dataset.y, mu_own_ref, log_w, ref.sigma)
        return log_f1, log_f0

    if scenario == Scenario.II:
        if mode.variant == "reduced_no_ps":
            log_f0 = log_phi0
            log_w = _log_weights_w(dataset, ref.gamma)
            mu0_r, mu1_r, _ = _mu_components(dataset, ref)
            log_f1 = _split_by_exposure(
                dataset, dataset.y, {0: mu0_r, 1: mu1_r},
                {0: log_w, 1: log_w}, ref.sigma)
            return log_f1, log_f0
        log_f0 = log_phi0 + log_p_own
        if table is not None:
            f1 = np.empty(dataset.n)
            for e_val in (0, 1):
                sel = dataset.e == e_val
                f1[sel] = table.evaluate(dataset.y[sel], e=e_val)
            log_f1 = np.log(np.maximum(f1, 1e-300))
        else:
            log_w = _log_weights_w(dataset, ref.gamma)
            if variant == "misspec_marginal":
                log_w = np.full(dataset.n, -np.log(dataset.n))
            mu0_r, mu1_r, _ = _mu_components(dataset, ref)
            u_r = dataset.x @ ref.phi
            log_f1 = _split_by_exposure(
                dataset, dataset.y, {0: mu0_r, 1: mu1_r},
                {0: log_w + log_expit(-u_r), 1: log_w + log_expit(u_r)},
                ref.sigma)
        return log_f1, log_f0

    # Scenario III: per-record two-component f_y times the exposure mass
    if mode.variant == "reduced_no_ps":
        log_f0 = log_phi0
        log_exposure = 0.0
    else:
        log_f0 = log_phi0 + log_p_own
        log_exposure = np.where(
            dataset.e == 1,
            np.log(max(exposure_mass_mismatch(dataset, ref, 1), 1e-300)),
            np.log(max(exposure_mass_mismatch(dataset, ref, 0), 1e-300)))
    p_ref = expit(dataset.x @ ref.phi)
    mu0_r, mu1_r, _ = _mu_components(dataset, ref)
    log_c1 = _log_norm_pdf(dataset.y - mu1_r, ref.sigma)
    log_c0 = _log_norm_pdf(dataset.y - mu0_r, ref.sigma)
    log_fy = np.logaddexp(log_c1 + np.log(np.maximum(p_ref, 1e-300)),
                          log_c0 + np.log(np.maximum(1 - p_ref, 1e-300)))
    log_f1 = log_fy + log_exposure
    return log_f1, log_f0


def _fixed_reference_f1(dataset: LinkedDataset, ref: Theta,
                        table: OracleDensityTable | None) -> np.ndarray:
    """Mismatch-component log density at fixed reference parameters."""
    scenario = dataset.scenario
    if scenario == Scenario.I:
        if table is not None:
            return np.log(np.maximum(table.evaluate(dataset.y), 1e-300))
        log_w = _log_weights_w(dataset, ref.gamma)
        _, _, mu_own_ref = _mu_components(dataset, ref)
        return _log_mixture(dataset.y, mu_own_ref, log_w, ref.sigma)
    if scenario == Scenario.II:
        if table is not None:
            f1 = np.empty(dataset.n)
            for e_val in (0, 1):
                sel = dataset.e == e_val
                f1[sel] = table.evaluate(dataset.y[sel], e=e_val)
            return np.log(np.maximum(f1, 1e-300))
        log_w = _log_weights_w(dataset, ref.gamma)
        mu0_r, mu1_r, _ = _mu_components(dataset, ref)
        u_r = dataset.x @ ref.phi
        return _split_by_exposure(
            dataset, dataset.y, {0: mu0_r, 1: mu1_r},
            {0: log_w + log_expit(-u_r), 1: log_w + log_expit(u_r)},
            ref.sigma)
    log_exposure = np.where(
        dataset.e == 1,
        np.log(max(exposure_mass_mismatch(dataset, ref, 1), 1e-300)),
        np.log(max(exposure_mass_mismatch(dataset, ref, 0), 1e-300)))
    p_ref = expit(dataset.x @ ref.phi)
    mu0_r, mu1_r, _ = _mu_components(dataset, ref)
    log_c1 = _log_norm_pdf(dataset.y - mu1_r, ref.sigma)
    log_c0 = _log_norm_pdf(dataset.y - mu0_r, ref.sigma)
    log_fy = np.logaddexp(log_c1 + np.log(np.maximum(p_ref, 1e-300)),
                          log_c0 + np.log(np.maximum(1 - p_ref, 1e-300)))
    return log_fy + log_exposure


def posterior_from_logdensities(dataset, theta, log_f1, log_f0):
    """Bayes posterior m_i = h f1 / (h f1 + (1-h) f0), audit overwritten."""
    zg = dataset.z @ theta.gamma
    log_h = log_expit(zg)
    log_1mh = log_expit(-zg)
    a = log_h + log_f1
    b = log_1mh + log_f0
    with np.errstate(invalid="ignore"):
        diff = a - b
    bad = np.isnan(diff) & (a == -np.inf) & (b == -np.inf)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise ZeroDenominator(
            f"both mixture components vanish at record {idx}")
    m_hat = expit(diff)
    m_hat = np.where(a == -np.inf, 0.0, m_hat)
    m_hat = np.where(b == -np.inf, np.where(a == -np.inf, m_hat, 1.0), m_hat)
    audited = dataset.in_audit
    if np.any(audited):
        m_hat = m_hat.copy()
        m_hat[audited] = dataset.m_audit[audited]
    return MismatchPosterior(values=m_hat)


def e_step(dataset: LinkedDataset, theta: Theta,
           mode: MixtureMode | None = None) -> MismatchPosterior:
    """Posterior mismatch probabilities under the scenario's mixture."""
    if mode is None:
        mode = MixtureMode()
    log_f1, log_f0 = component_logdensities(dataset, theta, mode)
    return posterior_from_logdensities(dataset, theta, log_f1, log_f0)


def build_oracle_table(dataset: LinkedDataset, theta: Theta,
                       n_grid: int = 4001, span: float = 10.0) -> OracleDensityTable:
    """Tabulate the scenario's mismatch component at reference parameters."""
    scenario = dataset.scenario
    _, _, mu_own = _mu_components(dataset, theta)
    lo = float(min(dataset.y.min(), mu_own.min()) - span * theta.sigma)
    hi = float(max(dataset.y.max(), mu_own.max()) + span * theta.sigma)
    grid = np.linspace(lo, hi, n_grid)
    slots = {}
    if scenario == Scenario.I:
        slots[None] = (grid, mismatch_density_I(grid, dataset, theta))
    elif scenario == Scenario.II:
        for e_val in (0, 1):
            slots[e_val] = (grid, mismatch_density_II(grid, e_val, dataset, theta))
    else:
        raise ValueError("scenario III mismatch component depends on x; "
                         "use oracle_theta instead of a table")
    return OracleDensityTable(slots=slots)

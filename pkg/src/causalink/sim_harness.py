"""Monte Carlo harness: data generation, mismatch injection by a uniformly
chosen maximum-length cycle, audit assignment, and replication summaries.

Replications use counter-based Philox substreams keyed by (seed, rep), so
results do not depend on execution order.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np
from scipy import integrate
from scipy.special import expit

from . import em_engine, estimators, mixture
from .data_model import LinkedDataset, Scenario, Theta
from .inference import LambdaSpec

# default-DGP coefficients: outcome, propensity and mismatch models
BETA_X_STAR = np.array([3.0, 2.0])
BETA_EX_STAR = np.array([1.5, 1.0])
PHI_STAR = np.array([-2.0, 1.0])
GAMMA_STAR = np.array([-10.0, 5.0])
SIGMA_STAR = 1.0
TAU_STAR_CORRECT = 3.0

LAMBDA_IDS = {"o": LambdaSpec.outcome(), "ps": LambdaSpec.ps(),
              "dr": LambdaSpec.dr()}


@dataclass
class SimConfig:
    n: int
    scenario: Scenario
    dgp: object = "correct"  # correct | misspec_outcome | ("linear_normal", beta, phi)
    fit_misspec: str = "none"  # none | wrong_second_component
    # joint_em solves the coupled estimating equations in one EM;
    # audit_chain anchors gamma on the audit sample and runs separate
    # exposure and outcome chains (requires an audit sample)
    fit_protocol: str = "joint_em"
    mismatch_mode: object = "model_h"  # model_h | ("bernoulli", alpha)
    audit_fraction: float = 0.0
    replications: int = 100
    seed: int = 0
    estimator_set: tuple = ("o", "ps", "dr")
    mixture_variant: str = "full"  # full | reduced_no_ps | oracle_fixed
    sigma_known: float | None = 1.0
    em_max_iter: int = 200
    compute_se: bool = True
    naive_subsample_fraction: float | None = None  # for the "naive_sub" id

    def __post_init__(self):
        if isinstance(self.scenario, str):
            self.scenario = Scenario.parse(self.scenario)
        self.estimator_set = tuple(self.estimator_set)
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0.0 <= self.audit_fraction <= 1.0:
            raise ValueError("audit_fraction must lie in [0, 1]")
        audit_needed = {"ps_audit", "dr_audit", "correct_only"}
        if audit_needed & set(self.estimator_set) \
                and self.audit_fraction * self.n < 2:
            raise ValueError(
                "audit-based estimators need audit_fraction * n >= 2")
        if self.fit_protocol not in ("joint_em", "audit_chain"):
            raise ValueError(f"unknown fit_protocol {self.fit_protocol!r}")
        if self.fit_protocol == "audit_chain" and self.audit_fraction * self.n < 2:
            raise ValueError("audit_chain fitting needs audit_fraction * n >= 2")


@dataclass
class SummaryRow:
    estimator_id: str
    mean: float
    bias: float
    abs_bias: float
    sd: float
    coverage: float | None
    mean_se: float | None
    mc_se_bias: float
    mc_se_coverage: float | None
    n_reps: int
    n_failures: int
    clip_total: int


@dataclass
class SimSummary:
    config: SimConfig
    tau_star: float
    rows: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)  # id -> array of tau_hat
    n_failures_total: int = 0
    failure_rate_flagged: bool = False
    singleton_cycle_events: int = 0

    CSV_HEADER = ("estimator_id,mean,bias,abs_bias,sd,coverage,mean_se,"
                  "mc_se_bias,mc_se_coverage,n_reps,n_failures,clip_total")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self.CSV_HEADER + "\n")

        def fmt(v):
            return "" if v is None else repr(float(v))
        for row in self.rows.values():
            buf.write(",".join([
                row.estimator_id, fmt(row.mean), fmt(row.bias),
                fmt(row.abs_bias), fmt(row.sd), fmt(row.coverage),
                fmt(row.mean_se), fmt(row.mc_se_bias),
                fmt(row.mc_se_coverage), str(row.n_reps),
                str(row.n_failures), str(row.clip_total)]) + "\n")
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'estimator':<12}{'|bias|':>9}{'SD':>9}{'CVG %':>9}"]
        for row in self.rows.values():
            cvg = "" if row.coverage is None else f"{100 * row.coverage:8.1f}"
            lines.append(f"{row.estimator_id:<12}{row.abs_bias:9.3f}"
                         f"{row.sd:9.3f}{cvg:>9}")
        return "\n".join(lines) + "\n"


def rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([seed, rep])))


def _dgp_kind(dgp) -> str:
    return dgp if isinstance(dgp, str) else dgp[0]


def true_phi(config: SimConfig) -> np.ndarray:
    if _dgp_kind(config.dgp) == "linear_normal":
        return np.array([0.0, float(config.dgp[2])])
    return PHI_STAR.copy()


def true_gamma(config: SimConfig) -> np.ndarray:
    if isinstance(config.mismatch_mode, (tuple, list)):
        alpha = float(config.mismatch_mode[1])
        logit = math.log(alpha / (1 - alpha)) if 0 < alpha < 1 else -math.inf
        return np.array([logit, 0.0])
    return GAMMA_STAR.copy()


def true_theta(config: SimConfig) -> Theta:
    """Generating parameters (outcome block meaningful only for the linear
    DGPs)."""
    kind = _dgp_kind(config.dgp)
    if kind == "linear_normal":
        beta = float(config.dgp[1])
        return Theta(beta_x=np.array([0.0, 1.0]),
                     beta_ex=np.array([1.0, beta - 1.0]),
                     gamma=true_gamma(config), phi=true_phi(config),
                     sigma=SIGMA_STAR, tau=1.0)
    return Theta(beta_x=BETA_X_STAR.copy(), beta_ex=BETA_EX_STAR.copy(),
                 gamma=true_gamma(config), phi=true_phi(config),
                 sigma=SIGMA_STAR, tau=TAU_STAR_CORRECT)


def _misspec_mu0(x):
    return 5.0 - 0.25 * (x ** 2 + np.abs(np.sin(2.0 * np.pi * x / 3.0)))


def _misspec_mu1(x):
    return 4.5 + 3.0 * np.exp(0.3 * (x - np.sqrt(x)))


def true_tau(config: SimConfig) -> float:
    kind = _dgp_kind(config.dgp)
    if kind == "correct":
        return TAU_STAR_CORRECT
    if kind == "linear_normal":
        return 1.0  # contrast beta*x + 1 - x has mean 1 for centered X
    if kind == "misspec_outcome":
        val, _ = integrate.quad(
            lambda x: (_misspec_mu1(x) - _misspec_mu0(x)) / 3.0,
            0.0, 3.0, points=[1.5], limit=200)
        return float(val)
    raise ValueError(f"unknown dgp {config.dgp!r}")


def generate_clean(config: SimConfig, rng: np.random.Generator) -> LinkedDataset:
    """Draw covariates, exposure, latent mismatch flags, and outcomes with
    every record correctly linked."""
    n = config.n
    kind = _dgp_kind(config.dgp)
    if kind == "linear_normal":
        x_raw = rng.standard_normal(n)
    else:
        x_raw = rng.uniform(0.0, 3.0, size=n)
    x = np.column_stack([np.ones(n), x_raw])
    z = x.copy()
    e = (rng.random(n) < expit(x @ true_phi(config))).astype(int)
    if isinstance(config.mismatch_mode, (tuple, list)):
        alpha = float(config.mismatch_mode[1])
        m = (rng.random(n) < alpha).astype(int)
    else:
        m = (rng.random(n) < expit(z @ GAMMA_STAR)).astype(int)
    noise = rng.standard_normal(n) * SIGMA_STAR
    if kind == "misspec_outcome":
        y = np.where(e == 1, _misspec_mu1(x_raw), _misspec_mu0(x_raw)) + noise
    else:
        th = true_theta(config)
        y = th.mu_e(x, e) + noise
    return LinkedDataset(x=x, e=e, y=y, z=z, scenario=config.scenario,
                         m_true=m)


def inject_mismatches(dataset_clean: LinkedDataset,
                      rng: np.random.Generator) -> tuple[LinkedDataset, int]:
    """Rearrange File-B payloads of the flagged records by a uniformly
    chosen single cycle of maximum length.

    Scenario I permutes y; Scenario III permutes e; Scenario II moves (y, e)
    jointly. A singleton flagged set cannot be deranged: its flag is cleared
    and the event counted in the returned integer.
    """
    m = dataset_clean.m_true
    if m is None:
        raise ValueError("clean dataset lacks true mismatch flags")
    m = m.copy()
    flagged = np.flatnonzero(m == 1)
    singleton_events = 0
    if flagged.size == 1:
        m[flagged] = 0
        singleton_events = 1
        flagged = flagged[:0]
    y = dataset_clean.y.copy()
    e = dataset_clean.e.copy()
    if flagged.size >= 2:
        order = rng.permutation(flagged)
        src = np.roll(order, -1)  # record order[j] receives order[j+1]'s payload
        scenario = dataset_clean.scenario
        if scenario in (Scenario.I, Scenario.II):
            y[order] = dataset_clean.y[src]
        if scenario in (Scenario.II, Scenario.III):
            e[order] = dataset_clean.e[src]
    return dataset_clean.replace(y=y, e=e, m_true=m), singleton_events


def assign_audit(dataset: LinkedDataset, fraction: float,
                 rng: np.random.Generator) -> LinkedDataset:
    """Reveal true match status on a uniformly random subset."""
    if dataset.m_true is None:
        raise ValueError("dataset lacks true mismatch flags")
    n = dataset.n
    k = int(round(fraction * n))
    idx = rng.choice(n, size=k, replace=False) if k else np.array([], dtype=int)
    in_audit = np.zeros(n, dtype=bool)
    in_audit[idx] = True
    m_audit = np.full(n, -1, dtype=int)
    m_audit[idx] = dataset.m_true[idx]
    return dataset.replace(in_audit=in_audit, m_audit=m_audit)


def fit_misspecified(dataset: LinkedDataset):
    """EM fits with the deliberately wrong mismatch component.

    Scenarios I and II replace the weighted mixture component with the
    marginal over all observed records; Scenario III first fits the
    exposure-only mixture for the propensity parameters, then the outcome
    mixture at that frozen propensity. Returns (theta, posterior, mode) with
    the mode used for the final posterior (and hence for inference).
    """
    scenario = dataset.scenario
    if scenario in (Scenario.I, Scenario.II):
        mode = mixture.MixtureMode(variant="misspec_marginal")
        cfg = em_engine.EmConfig(mixture_mode=mode)
        theta, post, _ = em_engine.run_em(dataset, cfg)
        return theta, post, mode
    # Scenario III: two-stage
    e_mode = mixture.MixtureMode(variant="e_only")
    theta1, _, _ = em_engine.run_em(dataset, em_engine.EmConfig(mixture_mode=e_mode))
    y_mode = mixture.MixtureMode(variant="y_fixed_phi", fixed_phi=theta1.phi)
    theta2, post2, _ = em_engine.run_em(
        dataset, em_engine.EmConfig(mixture_mode=y_mode))
    theta2.phi = theta1.phi.copy()
    return theta2, post2, y_mode


def _single_replication(config: SimConfig, rep: int):
    """Run one replication; returns (results, singleton_events) where
    results maps estimator id to (tau_hat, ci_low, ci_high, se, n_clip)."""
    rng = rep_rng(config.seed, rep)
    clean = generate_clean(config, rng)
    linked, singletons = inject_mismatches(clean, rng)
    data = assign_audit(linked, config.audit_fraction, rng)
    tstar_theta = true_theta(config)
    results: dict = {}

    requested = set(config.estimator_set)
    lam_requested = [eid for eid in config.estimator_set if eid in LAMBDA_IDS]

    wf_shared = None

    def shared_workflow():
        nonlocal wf_shared
        if wf_shared is None:
            wf_shared = em_engine.run_audit_workflow(
                data, sigma_known=config.sigma_known or 1.0,
                marginal_mismatch_component=(
                    config.fit_misspec == "wrong_second_component"))
        return wf_shared

    theta = None
    if lam_requested:
        if config.fit_protocol == "audit_chain":
            wf = shared_workflow()
            theta = wf.theta
            for eid in lam_requested:
                rep_out = estimators.lambda_report_audit_chain(
                    data, wf, LAMBDA_IDS[eid], compute_se=config.compute_se)
                results[eid] = (rep_out.tau_hat, rep_out.ci_low,
                                rep_out.ci_high, rep_out.se,
                                rep_out.diagnostics.get("n_clipped", 0))
        else:
            if config.fit_misspec == "wrong_second_component":
                theta, post, mode = fit_misspecified(data)
            else:
                if config.mixture_variant == "oracle_fixed":
                    mode = mixture.MixtureMode(variant="oracle_fixed",
                                               oracle_theta=tstar_theta)
                else:
                    mode = mixture.MixtureMode(variant=config.mixture_variant)
                cfg = em_engine.EmConfig(mixture_mode=mode,
                                         sigma_known=config.sigma_known,
                                         max_iter=config.em_max_iter)
                theta, post, _ = em_engine.run_em(data, cfg)
            for eid in lam_requested:
                rep_out = estimators.lambda_report(
                    data, theta, post.values, LAMBDA_IDS[eid], mode,
                    compute_se=config.compute_se)
                results[eid] = (rep_out.tau_hat, rep_out.ci_low,
                                rep_out.ci_high, rep_out.se,
                                rep_out.diagnostics.get("n_clipped", 0))

    if "naive" in requested:
        results["naive"] = (estimators.tau_naive(data, true_phi(config)),
                            None, None, None, 0)
    if "naive_sub" in requested:
        frac = config.naive_subsample_fraction or 0.1
        k = max(2, int(round(frac * data.n)))
        idx = rng.choice(data.n, size=k, replace=False)
        sub = LinkedDataset(x=data.x[idx], e=data.e[idx], y=data.y[idx],
                            z=data.z[idx], scenario=data.scenario)
        results["naive_sub"] = (estimators.tau_naive(sub, true_phi(config)),
                                None, None, None, 0)
    if "plain" in requested:
        results["plain"] = (estimators.tau_plain(data), None, None, None, 0)
    if "o_ig" in requested:
        results["o_ig"] = (estimators.tau_conventional_ignoring(data, "outcome"),
                           None, None, None, 0)
    if "ps_ig" in requested:
        results["ps_ig"] = (estimators.tau_conventional_ignoring(data, "ps"),
                            None, None, None, 0)
    if "correct_only" in requested:
        results["correct_only"] = (
            estimators.tau_audit_correct_only(data, true_phi(config)),
            None, None, None, 0)
    if "oracle" in requested:
        rep_out = estimators.oracle_report(clean)
        results["oracle"] = (rep_out.tau_hat, rep_out.ci_low, rep_out.ci_high,
                             rep_out.se, 0)
    if "ps_audit" in requested:
        gamma_arg = phi_arg = None
        if config.fit_protocol == "audit_chain":
            wf = shared_workflow()
            gamma_arg = wf.theta.gamma
            phi_arg = wf.theta.phi
        elif config.fit_misspec == "wrong_second_component" and lam_requested:
            phi_arg = theta.phi
        elif config.fit_misspec == "wrong_second_component":
            theta_mis, _, _ = fit_misspecified(data)
            phi_arg = theta_mis.phi
        rep_out = estimators.tau_ps_adjusted_audit(data, gamma=gamma_arg,
                                                   phi=phi_arg)
        results["ps_audit"] = (rep_out.tau_hat, rep_out.ci_low,
                               rep_out.ci_high, rep_out.se,
                               rep_out.diagnostics.get("n_clipped", 0))
    if "dr_audit" in requested:
        if config.fit_protocol == "audit_chain":
            wf = shared_workflow()
        else:
            phi_override = None
            if config.fit_misspec == "wrong_second_component":
                if lam_requested:
                    phi_override = theta.phi
                else:
                    theta_mis, _, _ = fit_misspecified(data)
                    phi_override = theta_mis.phi
            wf = em_engine.run_audit_workflow(
                data, sigma_known=config.sigma_known or 1.0,
                phi_override=phi_override)
        rep_out = estimators.tau_dr_audit(data, workflow=wf,
                                          compute_se=config.compute_se)
        results["dr_audit"] = (rep_out.tau_hat, rep_out.ci_low,
                               rep_out.ci_high, rep_out.se,
                               rep_out.diagnostics.get("n_clipped", 0))
    return results, singletons


def replicate(config: SimConfig) -> SimSummary:
    """Full Monte Carlo pipeline with per-replication failure isolation."""
    tstar = true_tau(config)
    acc = {eid: {"tau": [], "cover": [], "se": [], "clip": 0, "fail": 0}
           for eid in config.estimator_set}
    singleton_total = 0
    total_failures = 0
    for rep in range(config.replications):
        try:
            results, singles = _single_replication(config, rep)
        except Exception:
            total_failures += 1
            for rec in acc.values():
                rec["fail"] += 1
            continue
        singleton_total += singles
        for eid, rec in acc.items():
            if eid not in results:
                rec["fail"] += 1
                continue
            tau_hat, lo, hi, se, n_clip = results[eid]
            if tau_hat is None or not np.isfinite(tau_hat):
                rec["fail"] += 1
                continue
            rec["tau"].append(tau_hat)
            rec["clip"] += n_clip
            if lo is not None and hi is not None:
                rec["cover"].append(1.0 if lo <= tstar <= hi else 0.0)
                rec["se"].append(se)

    summary = SimSummary(config=config, tau_star=tstar)
    R = config.replications
    for eid, rec in acc.items():
        taus = np.asarray(rec["tau"], dtype=float)
        if taus.size == 0:
            continue
        mean = float(taus.mean())
        sd = float(taus.std(ddof=1)) if taus.size > 1 else 0.0
        bias = mean - tstar
        coverage = mean_se = mc_se_cov = None
        if rec["cover"]:
            coverage = float(np.mean(rec["cover"]))
            mean_se = float(np.mean(rec["se"]))
            mc_se_cov = math.sqrt(max(coverage * (1 - coverage), 0.0)
                                  / len(rec["cover"]))
        summary.rows[eid] = SummaryRow(
            estimator_id=eid, mean=mean, bias=bias, abs_bias=abs(bias),
            sd=sd, coverage=coverage, mean_se=mean_se,
            mc_se_bias=sd / math.sqrt(taus.size),
            mc_se_coverage=mc_se_cov, n_reps=int(taus.size),
            n_failures=rec["fail"], clip_total=rec["clip"])
        summary.estimates[eid] = taus
    summary.n_failures_total = total_failures
    summary.failure_rate_flagged = total_failures > 0.05 * R
    summary.singleton_cycle_events = singleton_total
    return summary


# --- presets mirroring the reported simulation designs --------------------

def preset_configs(name: str, seed: int = 0) -> list[SimConfig]:
    if name == "table2":
        return [SimConfig(
            n=1000, scenario=s, dgp="correct", audit_fraction=0.0,
            replications=200, seed=seed + k,
            estimator_set=("naive_sub", "o", "ps", "dr", "oracle"),
            mixture_variant="oracle_fixed")
            for k, s in enumerate((Scenario.I, Scenario.II, Scenario.III))]
    if name == "table3-set1":
        return [SimConfig(
            n=10000, scenario=s, dgp="misspec_outcome", audit_fraction=0.1,
            replications=100, seed=seed + k,
            estimator_set=("o", "dr", "ps_audit", "dr_audit"),
            fit_protocol="audit_chain", mixture_variant="full")
            for k, s in enumerate((Scenario.I, Scenario.II, Scenario.III))]
    if name == "table3-set2":
        return [SimConfig(
            n=10000, scenario=s, dgp="correct",
            fit_misspec="wrong_second_component", audit_fraction=0.1,
            replications=100, seed=seed + k,
            estimator_set=("o", "ps", "dr", "ps_audit", "dr_audit"),
            fit_protocol="audit_chain", mixture_variant="full")
            for k, s in enumerate((Scenario.I, Scenario.II, Scenario.III))]
    if name == "fig2":
        return [SimConfig(
            n=1000, scenario=s, dgp=("linear_normal", 2.0, 1.0),
            mismatch_mode=("bernoulli", 1.0 / 3.0), audit_fraction=0.0,
            replications=2000, seed=seed + k, estimator_set=("naive",),
            compute_se=False)
            for k, s in enumerate((Scenario.I, Scenario.II, Scenario.III))]
    raise ValueError(f"unknown preset {name!r}")

"""Command-line entry point: estimation on user data, Monte Carlo
simulation presets, bias surfaces, and the linked-data analysis pipeline.

Exit codes: 0 success, 2 invalid input/configuration, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import (bias_analytics, data_model, em_engine, estimators, glm,
               mixture, model_spec, sim_harness)
from .data_model import EstimateReport, LinkedDataset, Scenario, Theta
from .inference import LambdaSpec

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_ESTIMATION = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_BAD_INPUT):
        super().__init__(message)
        self.code = code


def _write_manifest(out_dir: Path, command: str, resolved: dict) -> None:
    manifest = {"command": command, "config": resolved}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _parse_sigma(flag: str):
    if flag == "estimate":
        return None
    if flag.startswith("known:"):
        try:
            value = float(flag.split(":", 1)[1])
        except ValueError:
            raise CliError(f"bad --sigma value {flag!r}")
        if value <= 0:
            raise CliError("--sigma known value must be positive")
        return value
    raise CliError(f"--sigma must be known:<v> or estimate, got {flag!r}")


def _parse_mixture(flag: str, dataset=None) -> mixture.MixtureMode:
    if flag == "full":
        return mixture.MixtureMode(variant="full")
    if flag == "reduced":
        return mixture.MixtureMode(variant="reduced_no_ps")
    if flag.startswith("oracle:"):
        path = Path(flag.split(":", 1)[1])
        if not path.exists():
            raise CliError(f"oracle density table {path} not found")
        table = mixture.OracleDensityTable.from_csv(path.read_text())
        return mixture.MixtureMode(variant="oracle_fixed", oracle_density=table)
    raise CliError(f"--mixture must be full, reduced or oracle:<path>, got {flag!r}")


# --- estimate -------------------------------------------------------------

def cmd_estimate(args) -> int:
    in_path = Path(args.input)
    if not in_path.exists():
        raise CliError(f"input file {in_path} not found")
    try:
        scenario = Scenario.parse(args.scenario)
        dataset = data_model.from_csv(in_path.read_text(), scenario)
    except ValueError as exc:
        raise CliError(str(exc))
    violations = data_model.validate(dataset)
    if violations:
        raise CliError("invalid dataset: " + "; ".join(violations[:5]))
    sigma = _parse_sigma(args.sigma)
    mode = _parse_mixture(args.mixture)
    est_ids = [s.strip() for s in args.estimators.split(",") if s.strip()]
    known = {"o", "ps", "dr", "naive", "plain", "o_ig", "ps_ig",
             "ps_audit", "dr_audit", "correct_only"}
    bad = set(est_ids) - known
    if bad:
        raise CliError(f"unknown estimators: {sorted(bad)}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports: list[EstimateReport] = []
    try:
        lam_ids = [e for e in est_ids if e in sim_harness.LAMBDA_IDS]
        theta = post = None
        if lam_ids:
            cfg = em_engine.EmConfig(mixture_mode=mode, sigma_known=sigma)
            theta, post, trace = em_engine.run_em(dataset, cfg)
            for eid in lam_ids:
                reports.append(estimators.lambda_report(
                    dataset, theta, post.values, sim_harness.LAMBDA_IDS[eid],
                    mode, converged=trace.converged,
                    iterations=trace.iterations))
        for eid in est_ids:
            if eid in sim_harness.LAMBDA_IDS:
                continue
            if eid == "plain":
                reports.append(EstimateReport(
                    "plain", estimators.tau_plain(dataset), n_used=dataset.n))
            elif eid == "o_ig":
                reports.append(EstimateReport(
                    "o_ig", estimators.tau_conventional_ignoring(
                        dataset, "outcome"), n_used=dataset.n))
            elif eid in ("ps_ig", "naive"):
                reports.append(EstimateReport(
                    eid, estimators.tau_conventional_ignoring(dataset, "ps"),
                    n_used=dataset.n))
            elif eid == "correct_only":
                phi = glm.fit_logistic_weighted(
                    dataset.x, dataset.e, np.ones(dataset.n)).coefficients
                reports.append(EstimateReport(
                    "correct_only",
                    estimators.tau_audit_correct_only(dataset, phi),
                    n_used=int((dataset.in_audit
                                & (dataset.m_audit == 0)).sum())))
            elif eid == "ps_audit":
                reports.append(estimators.tau_ps_adjusted_audit(dataset))
            elif eid == "dr_audit":
                reports.append(estimators.tau_dr_audit(
                    dataset, sigma=sigma or 1.0))
    except (estimators.EmptyAudit, estimators.SingleClassAudit) as exc:
        raise CliError(str(exc))
    except CliError:
        raise
    except Exception as exc:
        raise CliError(f"estimation failed: {exc}", EXIT_ESTIMATION)

    lines = [EstimateReport.CSV_HEADER]
    lines += [r.to_csv_row() for r in reports]
    (out_dir / "estimate.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out_dir, "estimate", {
        "input": str(in_path), "scenario": scenario.value,
        "estimators": est_ids, "sigma": args.sigma, "mixture": args.mixture,
        "seed": args.seed})
    for r in reports:
        print(json.dumps(r.to_json_obj()))
    return EXIT_OK


# --- simulate -------------------------------------------------------------

SUMMARY_CSV_HEADER = "scenario," + sim_harness.SimSummary.CSV_HEADER
ESTIMATES_CSV_HEADER = "scenario,estimator_id,rep,tau_hat"


def cmd_simulate(args) -> int:
    try:
        if args.preset:
            configs = sim_harness.preset_configs(args.preset, seed=args.seed)
            if args.scenario:
                wanted = Scenario.parse(args.scenario)
                configs = [c for c in configs if c.scenario == wanted]
            if args.reps:
                configs = [sim_harness.SimConfig(
                    **{**c.__dict__, "replications": args.reps})
                    for c in configs]
        else:
            if not args.scenario:
                raise CliError("--scenario required without --preset")
            mode_variant = {"full": "full", "reduced": "reduced_no_ps",
                            "oracle": "oracle_fixed"}.get(args.mixture.split(":")[0])
            if mode_variant is None:
                raise CliError(f"bad --mixture {args.mixture!r}")
            configs = [sim_harness.SimConfig(
                n=args.n, scenario=Scenario.parse(args.scenario),
                replications=args.reps or 100, seed=args.seed,
                audit_fraction=args.audit_fraction,
                estimator_set=tuple(
                    s.strip() for s in args.estimators.split(",") if s.strip()),
                mixture_variant=mode_variant,
                sigma_known=_parse_sigma(args.sigma))]
    except (ValueError, CliError) as exc:
        raise CliError(str(exc))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_lines = [SUMMARY_CSV_HEADER]
    estimate_lines = [ESTIMATES_CSV_HEADER]
    for config in configs:
        summary = sim_harness.replicate(config)
        tag = config.scenario.value
        for line in summary.to_csv().splitlines()[1:]:
            summary_lines.append(f"{tag},{line}")
        for eid, taus in summary.estimates.items():
            for rep, tau in enumerate(taus):
                estimate_lines.append(f"{tag},{eid},{rep},{float(tau)!r}")
        print(f"scenario {tag} (tau* = {summary.tau_star:.4f}):")
        print(summary.to_table())
    (out_dir / "summary.csv").write_text("\n".join(summary_lines) + "\n")
    (out_dir / "estimate.csv").write_text("\n".join(estimate_lines) + "\n")
    _write_manifest(out_dir, "simulate", {
        "preset": args.preset, "scenario": args.scenario, "n": args.n,
        "reps": args.reps, "seed": args.seed,
        "audit_fraction": args.audit_fraction,
        "estimators": args.estimators, "mixture": args.mixture,
        "sigma": args.sigma})
    return EXIT_OK


# --- bias surface ---------------------------------------------------------

def cmd_bias_surface(args) -> int:
    if args.resolution < 1:
        raise CliError("--resolution must be >= 1")
    if args.beta_max < args.beta_min or args.phi_max < args.phi_min:
        raise CliError("range maxima must not be below minima")
    if not 0 < args.alpha <= 1:
        raise CliError("--alpha must lie in (0, 1]")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_text = bias_analytics.bias_surface_grid(
        (args.beta_min, args.beta_max), (args.phi_min, args.phi_max),
        args.resolution, alpha=args.alpha)
    (out_dir / "bias_surface.csv").write_text(csv_text)
    _write_manifest(out_dir, "bias-surface", {
        "beta_min": args.beta_min, "beta_max": args.beta_max,
        "phi_min": args.phi_min, "phi_max": args.phi_max,
        "resolution": args.resolution, "alpha": args.alpha})
    return EXIT_OK


# --- pipeline -------------------------------------------------------------

def _pipeline_conventional(x_out, x_ps, e, y):
    """Plain, PS, outcome and DR estimates on data taken at face value."""
    n = y.shape[0]
    out = {}
    out["plain"] = float(y[e == 1].mean() - y[e == 0].mean())
    design = np.hstack([x_out, e[:, None] * x_out])
    beta = glm.fit_wls(design, y, np.ones(n)).coefficients
    p_dim = x_out.shape[1]
    mu_contrast = x_out @ beta[p_dim:]
    out["o"] = float(mu_contrast.mean())
    phi = glm.fit_logistic_weighted(x_ps, e, np.ones(n)).coefficients
    p = np.clip(expit(x_ps @ phi), 1e-3, 1 - 1e-3)
    out["ps"] = float((e * y / p - (1 - e) * y / (1 - p)).mean())
    mu1 = x_out @ (beta[:p_dim] + beta[p_dim:])
    mu0 = x_out @ beta[:p_dim]
    aug = (mu_contrast + e * (y - mu1) / p - (1 - e) * (y - mu0) / (1 - p))
    out["dr"] = float(aug.mean())
    return out, beta, phi


def _pipeline_adjusted(dataset: LinkedDataset, gamma: np.ndarray,
                       beta0: np.ndarray, phi0: np.ndarray, sigma: float,
                       max_iter: int = 50, tol: float = 1e-5):
    """Mismatch-adjusted fits with the match-status model held at its known
    parameters; alternates posterior imputation with weighted refits."""
    p_dim = dataset.p_x
    design = np.hstack([dataset.x, dataset.e[:, None] * dataset.x])
    theta = Theta(beta_x=beta0[:p_dim], beta_ex=beta0[p_dim:], gamma=gamma,
                  phi=phi0, sigma=sigma)
    mode = mixture.MixtureMode(variant="full")
    m_hat = np.zeros(dataset.n)
    for _ in range(max_iter):
        m_hat = mixture.e_step(dataset, theta, mode).values
        w = 1.0 - m_hat
        beta_fit = glm.fit_wls(design, dataset.y, w)
        phi_fit = glm.fit_logistic_weighted(dataset.x, dataset.e, w,
                                            start=theta.phi)
        delta = max(float(np.max(np.abs(beta_fit.coefficients
                                        - np.concatenate([theta.beta_x,
                                                          theta.beta_ex])))),
                    float(np.max(np.abs(phi_fit.coefficients - theta.phi))))
        theta.beta_x = beta_fit.coefficients[:p_dim]
        theta.beta_ex = beta_fit.coefficients[p_dim:]
        theta.phi = phi_fit.coefficients
        if delta <= tol:
            break
    return theta, m_hat


def cmd_pipeline(args) -> int:
    import pandas as pd

    data_path = Path(args.data)
    spec_path = Path(args.model_spec)
    for path in (data_path, spec_path):
        if not path.exists():
            raise CliError(f"file {path} not found")
    try:
        spec = model_spec.parse_pipeline_spec(spec_path.read_text())
    except model_spec.SpecError as exc:
        raise CliError(f"model spec: {exc}")
    frame = pd.read_csv(data_path)
    needed = {spec.y_col, spec.e_col}
    for t in spec.outcome_terms + spec.ps_terms:
        if t.name:
            needed.add(t.name)
    for t in spec.mismatch_terms:
        if t.name:
            needed.add(t.name)
    missing = needed - set(frame.columns)
    if missing:
        raise CliError(f"data is missing columns: {sorted(missing)}")
    frame = frame.dropna(subset=sorted(needed))
    columns = {c: frame[c].to_numpy() for c in needed}
    y = np.asarray(columns[spec.y_col], dtype=float)
    e = np.asarray(columns[spec.e_col], dtype=float).astype(int)
    if not np.isin(e, (0, 1)).all():
        raise CliError(f"exposure column {spec.e_col!r} is not binary")
    try:
        x_out, _ = model_spec.build_design(columns, spec.outcome_terms)
        x_ps, _ = model_spec.build_design(columns, spec.ps_terms)
        z, gamma = model_spec.mismatch_design(columns, spec.mismatch_terms)
    except model_spec.SpecError as exc:
        raise CliError(str(exc))
    n = y.shape[0]

    clean_est, beta0, phi0 = _pipeline_conventional(x_out, x_ps, e, y)
    design0 = np.hstack([x_out, e[:, None] * x_out])
    sigma = float(np.sqrt(max(glm.residual_variance(
        design0, y, np.ones(n), beta0), 1e-8)))
    h = expit(z @ gamma)

    rows = {k: [] for k in ("plain", "ps_ig", "o_ig", "ps_adj", "o_adj",
                            "dr_adj", "ps_naive", "o_naive", "ps_audit",
                            "dr_audit")}
    mismatch_rates = []
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence([args.seed, 0])))
    for rep in range(args.reps):
        m = (rng.random(n) < h).astype(int)
        mismatch_rates.append(m.mean())
        clean = LinkedDataset(x=x_out, e=e, y=y, z=z, scenario=Scenario.II,
                              m_true=m)
        linked, _ = sim_harness.inject_mismatches(clean, rng)
        data = sim_harness.assign_audit(linked, args.audit_fraction, rng)
        e_m, y_m = data.e, data.y
        ig, beta_ig, phi_ig = _pipeline_conventional(x_out, x_ps, e_m, y_m)
        rows["plain"].append(ig["plain"])
        rows["ps_ig"].append(ig["ps"])
        rows["o_ig"].append(ig["o"])
        # "naive": restrict to the correctly linked subset
        keep = data.m_true == 0
        if keep.sum() > x_out.shape[1] * 2 + 2 and 0 < e_m[keep].mean() < 1:
            sub, _, _ = _pipeline_conventional(
                x_out[keep], x_ps[keep], e_m[keep], y_m[keep])
            rows["ps_naive"].append(sub["ps"])
            rows["o_naive"].append(sub["o"])
        # the adjusted stage alternates refits on the outcome design, so its
        # starting propensity must be fit on that same design
        phi_start = glm.fit_logistic_weighted(
            x_out, e_m, np.ones(n)).coefficients
        theta_adj, m_hat = _pipeline_adjusted(
            data, gamma, beta_ig, phi_start, sigma)
        rows["o_adj"].append(estimators.tau_lambda(
            data, theta_adj, m_hat, LambdaSpec.outcome()))
        rows["ps_adj"].append(estimators.tau_lambda(
            data, theta_adj, m_hat, LambdaSpec.ps()))
        rows["dr_adj"].append(estimators.tau_lambda(
            data, theta_adj, m_hat, LambdaSpec.dr()))
        audit = data.audit_indices
        if audit.size:
            m_aud = data.m_audit[audit]
            if 0 < m_aud.sum() < m_aud.size:
                try:
                    rows["ps_audit"].append(
                        estimators.tau_ps_adjusted_audit(data).tau_hat)
                    wf = em_engine.run_audit_workflow(data, sigma_known=sigma)
                    rows["dr_audit"].append(estimators.tau_dr_audit(
                        data, workflow=wf, compute_se=False).tau_hat)
                except Exception:
                    pass

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["estimator_id,mean,sd,n_reps"]
    for eid, vals in [("plain_clean", [clean_est["plain"]]),
                      ("ps_clean", [clean_est["ps"]]),
                      ("o_clean", [clean_est["o"]]),
                      ("dr_clean", [clean_est["dr"]])] + list(rows.items()):
        if not vals:
            continue
        arr = np.asarray(vals, dtype=float)
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        lines.append(f"{eid},{float(arr.mean())!r},{sd!r},{arr.size}")
    (out_dir / "table4.csv").write_text("\n".join(lines) + "\n")
    rate = float(np.mean(mismatch_rates)) if mismatch_rates else 0.0
    _write_manifest(out_dir, "pipeline", {
        "data": str(data_path), "model_spec": str(spec_path),
        "reps": args.reps, "seed": args.seed,
        "audit_fraction": args.audit_fraction,
        "mean_mismatch_rate": rate, "n": n})
    print(f"mean simulated mismatch rate: {rate:.4f} over {args.reps} reps")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalink",
        description="ATE estimation from record-linked data with mismatch error")
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="estimate ATEs from a linked CSV")
    p_est.add_argument("--input", required=True)
    p_est.add_argument("--scenario", required=True)
    p_est.add_argument("--estimators", default="o,ps,dr")
    p_est.add_argument("--sigma", default="known:1.0")
    p_est.add_argument("--mixture", default="full")
    p_est.add_argument("--seed", type=int, default=0)
    p_est.add_argument("--out", default="out")
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="Monte Carlo replication study")
    p_sim.add_argument("--preset",
                       choices=["table2", "table3-set1", "table3-set2", "fig2"])
    p_sim.add_argument("--scenario")
    p_sim.add_argument("--n", type=int, default=1000)
    p_sim.add_argument("--reps", type=int)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--audit-fraction", type=float, default=0.0)
    p_sim.add_argument("--estimators", default="o,ps,dr")
    p_sim.add_argument("--mixture", default="full")
    p_sim.add_argument("--sigma", default="known:1.0")
    p_sim.add_argument("--out", default="out")
    p_sim.set_defaults(func=cmd_simulate)

    p_bias = sub.add_parser("bias-surface", help="analytic bias grid")
    p_bias.add_argument("--beta-min", type=float, default=-2.0)
    p_bias.add_argument("--beta-max", type=float, default=2.0)
    p_bias.add_argument("--phi-min", type=float, default=-2.0)
    p_bias.add_argument("--phi-max", type=float, default=2.0)
    p_bias.add_argument("--resolution", type=int, default=21)
    p_bias.add_argument("--alpha", type=float, default=0.5)
    p_bias.add_argument("--out", default="out")
    p_bias.set_defaults(func=cmd_bias_surface)

    p_pipe = sub.add_parser("pipeline",
                            help="observational-study comparison table")
    p_pipe.add_argument("--data", required=True)
    p_pipe.add_argument("--model-spec", required=True, dest="model_spec")
    p_pipe.add_argument("--reps", type=int, default=10)
    p_pipe.add_argument("--seed", type=int, default=0)
    p_pipe.add_argument("--audit-fraction", type=float, default=0.1)
    p_pipe.add_argument("--out", default="out")
    p_pipe.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # estimation-stage failures
        print(f"error: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())

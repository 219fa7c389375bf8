import math

import numpy as np
import pytest
from scipy.special import expit

from causalink import sim_harness as sh
from causalink.data_model import LinkedDataset, Scenario


def _clean_with_flags(rng, n, scenario, m):
    cfg = sh.SimConfig(n=n, scenario=scenario, replications=1)
    ds = sh.generate_clean(cfg, rng)
    return ds.replace(m_true=np.asarray(m, dtype=int))


# --- mismatch injection -----------------------------------------------------

@pytest.mark.parametrize("scenario", [Scenario.I, Scenario.II, Scenario.III])
def test_injection_conserves_payload_multisets(scenario):
    rng = np.random.default_rng(70)
    for _ in range(50):
        n = int(rng.integers(4, 30))
        m = (rng.random(n) < 0.5).astype(int)
        if m.sum() == 1:
            continue
        clean = _clean_with_flags(rng, n, scenario, m)
        linked, events = sh.inject_mismatches(clean, rng)
        assert events == 0
        np.testing.assert_array_equal(np.sort(linked.y), np.sort(clean.y))
        np.testing.assert_array_equal(np.sort(linked.e), np.sort(clean.e))
        np.testing.assert_array_equal(linked.x, clean.x)
        keep = m == 0
        np.testing.assert_array_equal(linked.y[keep], clean.y[keep])
        np.testing.assert_array_equal(linked.e[keep], clean.e[keep])


def test_injection_deranges_flagged_outcomes():
    # with distinct outcome values no flagged record keeps its own payload
    rng = np.random.default_rng(71)
    trials = 1000
    for _ in range(trials):
        n = int(rng.integers(4, 16))
        m = np.zeros(n, dtype=int)
        k = int(rng.integers(2, n + 1))
        m[rng.choice(n, size=k, replace=False)] = 1
        clean = _clean_with_flags(rng, n, Scenario.I, m)
        linked, _ = sh.inject_mismatches(clean, rng)
        flagged = m == 1
        assert not np.any(np.isclose(linked.y[flagged], clean.y[flagged]))


def test_injection_moves_y_and_e_jointly_in_scenario_II():
    rng = np.random.default_rng(72)
    n = 12
    m = np.ones(n, dtype=int)
    clean = _clean_with_flags(rng, n, Scenario.II, m)
    linked, _ = sh.inject_mismatches(clean, rng)
    # every received (y, e) pair must exist as a pair in the clean data
    pairs_clean = {(float(y), int(e)) for y, e in zip(clean.y, clean.e)}
    pairs_new = {(float(y), int(e)) for y, e in zip(linked.y, linked.e)}
    assert pairs_new == pairs_clean


def test_injection_scenario_III_keeps_outcomes_in_place():
    rng = np.random.default_rng(73)
    n = 10
    m = np.ones(n, dtype=int)
    clean = _clean_with_flags(rng, n, Scenario.III, m)
    linked, _ = sh.inject_mismatches(clean, rng)
    np.testing.assert_array_equal(linked.y, clean.y)


def test_singleton_flag_is_cleared_and_counted():
    rng = np.random.default_rng(74)
    m = np.zeros(8, dtype=int)
    m[3] = 1
    clean = _clean_with_flags(rng, 8, Scenario.I, m)
    linked, events = sh.inject_mismatches(clean, rng)
    assert events == 1
    assert linked.m_true.sum() == 0
    np.testing.assert_array_equal(linked.y, clean.y)


def test_injection_requires_flags():
    rng = np.random.default_rng(75)
    cfg = sh.SimConfig(n=5, scenario=Scenario.I, replications=1)
    ds = sh.generate_clean(cfg, rng).replace(m_true=None)
    with pytest.raises(ValueError):
        sh.inject_mismatches(ds, rng)


# --- audit assignment -------------------------------------------------------

def test_assign_audit_counts_and_values():
    rng = np.random.default_rng(76)
    cfg = sh.SimConfig(n=200, scenario=Scenario.II, replications=1)
    ds = sh.generate_clean(cfg, rng)
    out = sh.assign_audit(ds, 0.25, rng)
    assert int(out.in_audit.sum()) == 50
    aud = out.in_audit
    np.testing.assert_array_equal(out.m_audit[aud], out.m_true[aud])
    assert np.all(out.m_audit[~aud] == -1)
    empty = sh.assign_audit(ds, 0.0, rng)
    assert int(empty.in_audit.sum()) == 0


# --- RNG streams ------------------------------------------------------------

def test_rep_rng_reproducible_and_disjoint():
    a1 = sh.rep_rng(5, 3).random(4)
    a2 = sh.rep_rng(5, 3).random(4)
    b = sh.rep_rng(5, 4).random(4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.allclose(a1, b)


# --- generating-model moments ----------------------------------------------

def test_default_dgp_moments():
    rng = np.random.default_rng(77)
    cfg = sh.SimConfig(n=100_000, scenario=Scenario.I, replications=1)
    ds = sh.generate_clean(cfg, rng)
    # closed forms: integrals of expit(x - 2) and expit(5x - 10) over U(0, 3)
    exposure_rate = (math.log1p(math.exp(1.0))
                     - math.log1p(math.exp(-2.0))) / 3.0
    mismatch_rate = (math.log1p(math.exp(5.0))
                     - math.log1p(math.exp(-10.0))) / 15.0
    assert ds.e.mean() == pytest.approx(exposure_rate, abs=0.006)
    assert ds.m_true.mean() == pytest.approx(mismatch_rate, abs=0.006)
    assert ds.x[:, 1].mean() == pytest.approx(1.5, abs=0.02)


def test_linear_normal_dgp_moments():
    rng = np.random.default_rng(78)
    cfg = sh.SimConfig(n=100_000, scenario=Scenario.II,
                       dgp=("linear_normal", 2.0, 1.0),
                       mismatch_mode=("bernoulli", 1.0 / 3.0), replications=1)
    ds = sh.generate_clean(cfg, rng)
    assert ds.x[:, 1].mean() == pytest.approx(0.0, abs=0.02)
    assert ds.x[:, 1].std() == pytest.approx(1.0, abs=0.02)
    assert ds.m_true.mean() == pytest.approx(1.0 / 3.0, abs=0.006)
    # contrast of the outcome means is tau* = 1
    contrast = ds.y[ds.e == 1].mean() - ds.y[ds.e == 0].mean()
    assert np.isfinite(contrast)


def test_true_tau_values():
    assert sh.true_tau(sh.SimConfig(n=10, scenario=Scenario.I)) == 3.0
    cfg_lin = sh.SimConfig(n=10, scenario=Scenario.I,
                           dgp=("linear_normal", 2.0, 1.0))
    assert sh.true_tau(cfg_lin) == 1.0
    cfg_mis = sh.SimConfig(n=10, scenario=Scenario.I, dgp="misspec_outcome")
    tau_mis = sh.true_tau(cfg_mis)
    # independent Monte Carlo check of the quadrature value
    rng = np.random.default_rng(79)
    x = rng.uniform(0.0, 3.0, 400_000)
    diff = sh._misspec_mu1(x) - sh._misspec_mu0(x)
    mc_se = diff.std() / math.sqrt(x.size)
    assert tau_mis == pytest.approx(diff.mean(), abs=4 * mc_se)


def test_true_theta_gamma_for_bernoulli_mode():
    cfg = sh.SimConfig(n=10, scenario=Scenario.I,
                       mismatch_mode=("bernoulli", 0.25))
    gamma = sh.true_gamma(cfg)
    assert expit(gamma[0]) == pytest.approx(0.25, abs=1e-12)
    assert gamma[1] == 0.0


# --- replication summaries --------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        sh.SimConfig(n=100, scenario=Scenario.I, replications=0)
    with pytest.raises(ValueError):
        sh.SimConfig(n=100, scenario=Scenario.I, audit_fraction=1.5)
    with pytest.raises(ValueError):
        sh.SimConfig(n=100, scenario=Scenario.I, audit_fraction=0.0,
                     estimator_set=("ps_audit",))


def test_replicate_fast_estimators_summary():
    cfg = sh.SimConfig(n=400, scenario=Scenario.I, replications=6, seed=11,
                       estimator_set=("plain", "o_ig", "oracle"))
    summary = sh.replicate(cfg)
    assert set(summary.rows) == {"plain", "o_ig", "oracle"}
    for eid, row in summary.rows.items():
        assert row.n_reps == 6
        assert row.n_failures == 0
        assert np.isfinite(row.mean)
        assert row.abs_bias == abs(row.bias)
        assert row.mc_se_bias == pytest.approx(
            row.sd / math.sqrt(row.n_reps))
    # the oracle sees clean data, so its CIs are well calibrated-ish
    assert summary.rows["oracle"].coverage is not None
    assert summary.tau_star == 3.0
    assert summary.n_failures_total == 0
    assert not summary.failure_rate_flagged


def test_replicate_deterministic_and_order_free():
    cfg_a = sh.SimConfig(n=300, scenario=Scenario.II, replications=4, seed=9,
                         estimator_set=("plain", "o_ig"))
    cfg_b = sh.SimConfig(n=300, scenario=Scenario.II, replications=4, seed=9,
                         estimator_set=("o_ig", "plain"))
    s_a = sh.replicate(cfg_a)
    s_b = sh.replicate(cfg_b)
    np.testing.assert_array_equal(s_a.estimates["plain"],
                                  s_b.estimates["plain"])
    np.testing.assert_array_equal(s_a.estimates["o_ig"], s_b.estimates["o_ig"])
    assert s_a.to_csv() != ""
    assert sh.replicate(cfg_a).to_csv() == s_a.to_csv()


def test_summary_csv_round_shape():
    cfg = sh.SimConfig(n=250, scenario=Scenario.III, replications=3, seed=2,
                       estimator_set=("plain",))
    summary = sh.replicate(cfg)
    lines = summary.to_csv().strip().splitlines()
    assert lines[0] == sh.SimSummary.CSV_HEADER
    assert len(lines) == 2
    fields = lines[1].split(",")
    assert fields[0] == "plain"
    assert len(fields) == len(sh.SimSummary.CSV_HEADER.split(","))
    assert summary.to_table().startswith("estimator")


def test_preset_configs_cover_scenarios():
    for name in ("table2", "table3-set1", "table3-set2", "fig2"):
        configs = sh.preset_configs(name)
        assert [c.scenario for c in configs] == [Scenario.I, Scenario.II,
                                                 Scenario.III]
    with pytest.raises(ValueError):
        sh.preset_configs("table9")


def test_fit_misspecified_runs_all_scenarios():
    for scenario in (Scenario.I, Scenario.II, Scenario.III):
        rng = sh.rep_rng(21, 0)
        cfg = sh.SimConfig(n=500, scenario=scenario, dgp="misspec_outcome",
                           audit_fraction=0.2, replications=1)
        clean = sh.generate_clean(cfg, rng)
        linked, _ = sh.inject_mismatches(clean, rng)
        data = sh.assign_audit(linked, 0.2, rng)
        theta, post, mode = sh.fit_misspecified(data)
        assert np.all(np.isfinite(theta.beta_x))
        assert np.all(np.isfinite(theta.phi))
        assert post.values.shape == (data.n,)
        assert np.all((post.values >= 0.0) & (post.values <= 1.0))

import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import expit

from causalink import bias_analytics as ba


def test_fig2_spec_tau_star_is_one():
    spec = ba.fig2_spec(beta=2.0, phi=1.0, alpha=0.25)
    assert ba.tau_star(spec) == pytest.approx(1.0, abs=1e-12)


def test_scenario_I_is_pure_attenuation():
    spec = ba.fig2_spec(beta=1.5, phi=0.7, alpha=0.3)
    assert ba.bias_scenario_I(spec) == pytest.approx(-0.3 * 1.0, abs=1e-12)


@pytest.mark.parametrize("fn", [ba.bias_scenario_II, ba.bias_scenario_III])
def test_bias_linear_in_alpha(fn):
    lo = fn(ba.fig2_spec(beta=2.0, phi=1.0, alpha=0.2))
    hi = fn(ba.fig2_spec(beta=2.0, phi=1.0, alpha=0.4))
    assert hi == pytest.approx(2.0 * lo, rel=1e-9)


def test_bias_zero_at_alpha_zero():
    spec = ba.fig2_spec(beta=2.0, phi=1.0, alpha=0.0)
    assert ba.bias_scenario_II(spec) == 0.0
    assert ba.bias_scenario_III(spec) == 0.0


def test_scenario_II_vanishes_for_constant_propensity():
    # with p(x) constant the two inverse-propensity averages cancel the
    # treated/control means exactly
    spec = ba.fig2_spec(beta=2.0, phi=0.0, alpha=0.5)
    assert ba.bias_scenario_II(spec) == pytest.approx(0.0, abs=1e-10)


def test_scenario_III_at_half_propensity_matches_attenuation():
    spec = ba.fig2_spec(beta=2.0, phi=0.0, alpha=0.5)
    assert ba.bias_scenario_III(spec) == pytest.approx(
        ba.bias_scenario_I(spec), abs=1e-10)


def test_marginal_probability_override():
    spec = ba.BiasModelSpec(mu0=lambda x: x, mu1=lambda x: x + 1.0,
                            phi_slope=1.0, p_marginal=0.42)
    assert ba.marginal_treated_probability(spec) == 0.42
    spec2 = ba.fig2_spec(beta=1.0, phi=0.0, alpha=0.1)
    assert ba.marginal_treated_probability(spec2) == pytest.approx(0.5,
                                                                   abs=1e-12)


def test_uniform_support_quadrature_matches_scipy():
    spec = ba.BiasModelSpec(
        mu0=lambda x: np.sin(x), mu1=lambda x: x ** 2,
        phi_slope=0.5, x_dist=("uniform", 0.0, 3.0), alpha=0.2)
    expected, _ = integrate.quad(lambda x: (x ** 2 - math.sin(x)) / 3.0, 0, 3)
    assert ba.tau_star(spec) == pytest.approx(expected, abs=1e-9)


def test_invalid_spec_arguments():
    with pytest.raises(ValueError):
        ba.BiasModelSpec(mu0=lambda x: x, mu1=lambda x: x, phi_slope=1.0,
                         alpha=1.5)
    with pytest.raises(ValueError):
        ba.BiasModelSpec(mu0=lambda x: x, mu1=lambda x: x, phi_slope=1.0,
                         x_dist=("triangular", 0, 1))


def test_nonconvergent_quadrature_raises():
    # a violently oscillatory outcome model cannot stabilize at 4 nodes
    spec = ba.BiasModelSpec(
        mu0=lambda x: np.sin(60.0 * x), mu1=lambda x: np.cos(57.0 * x),
        phi_slope=1.0, alpha=0.5, nodes=4)
    with pytest.raises(ba.QuadratureNonConvergence):
        ba.bias_scenario_II(spec)


# --- Monte Carlo oracles ----------------------------------------------------

def _mc_rule(n_draws, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n_draws)


def test_scenario_II_quadrature_matches_monte_carlo():
    beta, phi, alpha = 2.0, 1.0, 0.5
    spec = ba.fig2_spec(beta, phi, alpha)
    x = _mc_rule(1_000_000, 60)
    p = expit(phi * x)
    mu1 = beta * x + 1.0
    mu0 = x
    terms = (np.mean(mu1 * p) * np.mean(1.0 / p)
             - np.mean(mu0 * (1 - p)) * np.mean(1.0 / (1 - p)))
    mc = alpha * terms - alpha * 1.0
    se = alpha * (np.std(mu1 * p) * np.mean(1.0 / p)
                  + np.mean(mu1 * p) * np.std(1.0 / p)
                  + np.std(mu0 * (1 - p)) * np.mean(1.0 / (1 - p))
                  + np.mean(np.abs(mu0 * (1 - p))) * np.std(1.0 / (1 - p))
                  ) / math.sqrt(x.size)
    assert ba.bias_scenario_II(spec) == pytest.approx(mc, abs=max(3 * se, 1e-3))


def test_scenario_III_quadrature_matches_monte_carlo():
    beta, phi, alpha = 2.0, 1.0, 0.5
    spec = ba.fig2_spec(beta, phi, alpha)
    x = _mc_rule(1_000_000, 61)
    p_x = expit(phi * x)
    p = p_x.mean()
    mu1 = beta * x + 1.0
    mu0 = x
    # per-draw contributions so an MC standard error is available for the
    # heavy-tailed inverse-propensity pieces
    draws = alpha * (-1.0 + p * mu1 - (1 - p) * mu0
                     + p * mu0 * (1 - p_x) / p_x
                     - (1 - p) * mu1 * p_x / (1 - p_x))
    mc = float(draws.mean())
    se = float(draws.std()) / math.sqrt(draws.size)
    assert ba.bias_scenario_III(spec) == pytest.approx(mc, abs=4 * se)


# --- surface grid -----------------------------------------------------------

def test_bias_surface_grid_shape_and_zero_slice():
    csv_text = ba.bias_surface_grid((-1.0, 1.0), (-1.0, 1.0), 3, alpha=0.5)
    lines = csv_text.strip().splitlines()
    assert lines[0] == ba.BIAS_SURFACE_HEADER
    assert len(lines) == 1 + 3 * 9
    zero_phi_II = [ln.split(",") for ln in lines[1:]
                   if ln.split(",")[0] == "II" and float(ln.split(",")[2]) == 0.0]
    assert zero_phi_II, "grid should include the phi = 0 column"
    for fields in zero_phi_II:
        assert abs(float(fields[3])) < 1e-8
    for ln in lines[1:]:
        if ln.startswith("I,"):
            assert float(ln.rsplit(",", 1)[1]) == pytest.approx(-1.0,
                                                                abs=1e-12)

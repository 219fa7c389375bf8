import numpy as np
import pytest
from scipy.special import expit

from causalink.data_model import LinkedDataset, Scenario, Theta


def random_theta(rng, p_x=2, p_z=2, sigma=1.0):
    return Theta(beta_x=rng.uniform(-1, 1, p_x),
                 beta_ex=rng.uniform(-1, 1, p_x),
                 gamma=rng.uniform(-1.5, 0.0, p_z),
                 phi=rng.uniform(-1, 1, p_x),
                 sigma=sigma)


def make_dataset(rng, n, scenario, theta=None, audit_fraction=0.0,
                 p_x=2, p_z=2):
    """Small synthetic dataset drawn from the working model itself."""
    if theta is None:
        theta = random_theta(rng, p_x, p_z)
    x = np.column_stack([np.ones(n), rng.uniform(-1, 2, size=(n, p_x - 1))])
    z = np.column_stack([np.ones(n), rng.standard_normal((n, p_z - 1))])
    e = (rng.random(n) < expit(x @ theta.phi)).astype(int)
    m = (rng.random(n) < expit(z @ theta.gamma)).astype(int)
    y = theta.mu_e(x, e) + theta.sigma * rng.standard_normal(n)
    in_audit = np.zeros(n, dtype=bool)
    m_audit = np.full(n, -1, dtype=int)
    k = int(round(audit_fraction * n))
    if k:
        idx = rng.choice(n, size=k, replace=False)
        in_audit[idx] = True
        m_audit[idx] = m[idx]
    ds = LinkedDataset(x=x, e=e, y=y, z=z, scenario=scenario,
                       in_audit=in_audit, m_audit=m_audit, m_true=m)
    return ds, theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


ALL_SCENARIOS = [Scenario.I, Scenario.II, Scenario.III]

"""Domain types for linked datasets with uncertain match status.

A linked dataset holds n records of causal covariates x, binary exposure e,
outcome y, and linkage covariates z. Match status m is latent except on the
audit subset. Three file-split scenarios determine which fields travel
together through linkage:

    I:   (x, e) in file A, y in file B
    II:  x in file A, (y, e) in file B
    III: (x, y) in file A, e in file B
"""

from __future__ import annotations

import dataclasses
import enum
import io
from dataclasses import dataclass, field

import numpy as np


class Scenario(enum.Enum):
    I = "I"
    II = "II"
    III = "III"

    @classmethod
    def parse(cls, tag: str) -> "Scenario":
        try:
            return cls[tag.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown scenario tag {tag!r}; expected I, II or III")


@dataclass(frozen=True)
class LinkedRecord:
    """Single linked record; m is present exactly on audit records."""

    x: np.ndarray
    e: int
    y: float
    z: np.ndarray
    m: int | None = None
    in_audit: bool = False


@dataclass(frozen=True)
class LinkedDataset:
    """Columnar store of linked records, immutable after construction.

    ``m_audit`` holds the verified match status (0/1) where ``in_audit`` is
    True and -1 elsewhere. ``m_true`` is an optional simulation-only array of
    the true mismatch flags; it carries no invariants and is never serialized.
    """

    x: np.ndarray
    e: np.ndarray
    y: np.ndarray
    z: np.ndarray
    scenario: Scenario
    in_audit: np.ndarray = field(default=None)  # type: ignore[assignment]
    m_audit: np.ndarray = field(default=None)  # type: ignore[assignment]
    m_true: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        e = np.asarray(self.e).ravel()
        n = y.shape[0]
        in_audit = self.in_audit
        if in_audit is None:
            in_audit = np.zeros(n, dtype=bool)
        in_audit = np.asarray(in_audit, dtype=bool).ravel()
        m_audit = self.m_audit
        if m_audit is None:
            m_audit = np.full(n, -1, dtype=int)
        m_audit = np.asarray(m_audit, dtype=int).ravel()
        m_true = self.m_true
        if m_true is not None:
            m_true = np.asarray(m_true, dtype=int).ravel()
        for name, arr in [("x", x), ("e", e), ("y", y), ("z", z),
                          ("in_audit", in_audit), ("m_audit", m_audit)]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if m_true is not None:
            m_true.setflags(write=False)
        object.__setattr__(self, "m_true", m_true)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    @property
    def p_z(self) -> int:
        return self.z.shape[1]

    @property
    def audit_indices(self) -> np.ndarray:
        return np.flatnonzero(self.in_audit)

    @property
    def records(self) -> list[LinkedRecord]:
        out = []
        for i in range(self.n):
            audited = bool(self.in_audit[i])
            out.append(LinkedRecord(
                x=self.x[i], e=int(self.e[i]), y=float(self.y[i]), z=self.z[i],
                m=int(self.m_audit[i]) if audited else None, in_audit=audited))
        return out

    def replace(self, **changes) -> "LinkedDataset":
        return dataclasses.replace(self, **changes)


@dataclass
class Theta:
    """Full parameter vector of the outcome, mismatch and propensity models.

    The conditional outcome mean is x'beta_x + e * x'beta_ex; propensity and
    mismatch models are logistic in x'phi and z'gamma. Intercepts live in the
    leading 1-columns of x and z.
    """

    beta_x: np.ndarray
    beta_ex: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray
    sigma: float
    tau: float = 0.0

    def __post_init__(self):
        self.beta_x = np.asarray(self.beta_x, dtype=float).ravel()
        self.beta_ex = np.asarray(self.beta_ex, dtype=float).ravel()
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        self.phi = np.asarray(self.phi, dtype=float).ravel()
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def mu0(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.beta_x

    def mu1(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ (self.beta_x + self.beta_ex)

    def mu_e(self, x: np.ndarray, e: np.ndarray) -> np.ndarray:
        return self.mu0(x) + np.asarray(e) * (np.asarray(x) @ self.beta_ex)

    def propensity(self, x: np.ndarray) -> np.ndarray:
        from .glm import logistic
        return logistic(np.asarray(x) @ self.phi)

    def mismatch_prob(self, z: np.ndarray) -> np.ndarray:
        from .glm import logistic
        return logistic(np.asarray(z) @ self.gamma)

    def copy(self) -> "Theta":
        return Theta(self.beta_x.copy(), self.beta_ex.copy(), self.gamma.copy(),
                     self.phi.copy(), self.sigma, self.tau)


@dataclass
class MismatchPosterior:
    """Imputed mismatch probabilities, one per record, each in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()


@dataclass
class EstimateReport:
    estimator_id: str
    tau_hat: float
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    n_used: int = 0
    converged: bool = True
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "estimator_id": self.estimator_id,
            "tau_hat": self.tau_hat,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_used": self.n_used,
            "converged": self.converged,
            "iterations": self.iterations,
            "diagnostics": self.diagnostics,
        }

    def to_csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return ",".join([
            self.estimator_id, fmt(self.tau_hat), fmt(self.se),
            fmt(self.ci_low), fmt(self.ci_high), str(self.n_used),
            str(int(self.converged)), str(self.iterations)])

    CSV_HEADER = "estimator_id,tau_hat,se,ci_low,ci_high,n_used,converged,iterations"


def validate(dataset: LinkedDataset) -> list[str]:
    """Check dataset invariants; returns a list of violation messages.

    Total: malformed numerics are reported as violations, never raised.
    """
    out: list[str] = []
    n = dataset.n
    if n < 1:
        out.append("dataset empty: n must be >= 1")
        return out
    if dataset.x.shape[0] != n or dataset.z.shape[0] != n:
        out.append("covariate row counts disagree with record count")
    if dataset.e.shape[0] != n:
        out.append("exposure length disagrees with record count")
    if dataset.in_audit.shape[0] != n or dataset.m_audit.shape[0] != n:
        out.append("audit flag length disagrees with record count")
        return out
    for i in range(n):
        if dataset.e[i] not in (0, 1):
            out.append(f"record {i}: exposure not binary (e={dataset.e[i]})")
        if not np.isfinite(dataset.y[i]):
            out.append(f"record {i}: outcome not finite")
        if not np.all(np.isfinite(dataset.x[i])):
            out.append(f"record {i}: causal covariates not finite")
        if not np.all(np.isfinite(dataset.z[i])):
            out.append(f"record {i}: linkage covariates not finite")
        if dataset.in_audit[i]:
            if dataset.m_audit[i] not in (0, 1):
                out.append(f"record {i}: audit record without binary m")
        else:
            if dataset.m_audit[i] != -1:
                out.append(f"record {i}: m present outside audit subset")
    return out


def to_csv(dataset: LinkedDataset) -> str:
    """Serialize to the documented CSV layout (scenario travels out-of-band)."""
    p_x, p_z = dataset.p_x, dataset.p_z
    cols = ["y", "e", "m"] + [f"x{j+1}" for j in range(p_x)] + [f"z{j+1}" for j in range(p_z)]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for i in range(dataset.n):
        m_field = str(int(dataset.m_audit[i])) if dataset.in_audit[i] else ""
        row = [repr(float(dataset.y[i])), str(int(dataset.e[i])), m_field]
        row += [repr(float(v)) for v in dataset.x[i]]
        row += [repr(float(v)) for v in dataset.z[i]]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def from_csv(text: str, scenario: Scenario) -> LinkedDataset:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    header = [c.strip() for c in lines[0].split(",")]
    for required in ("y", "e"):
        if required not in header:
            raise ValueError(f"missing required column {required!r}")
    x_cols = sorted((c for c in header if c.startswith("x") and c[1:].isdigit()),
                    key=lambda c: int(c[1:]))
    z_cols = sorted((c for c in header if c.startswith("z") and c[1:].isdigit()),
                    key=lambda c: int(c[1:]))
    if not x_cols or not z_cols:
        raise ValueError("missing covariate columns x1.. / z1..")
    idx = {c: k for k, c in enumerate(header)}
    has_m = "m" in idx
    ys, es, ms, audits, xs, zs = [], [], [], [], [], []
    for ln in lines[1:]:
        parts = [p.strip() for p in ln.split(",")]
        ys.append(float(parts[idx["y"]]))
        es.append(int(float(parts[idx["e"]])))
        if has_m and parts[idx["m"]] != "":
            ms.append(int(float(parts[idx["m"]])))
            audits.append(True)
        else:
            ms.append(-1)
            audits.append(False)
        xs.append([float(parts[idx[c]]) for c in x_cols])
        zs.append([float(parts[idx[c]]) for c in z_cols])
    return LinkedDataset(
        x=np.array(xs), e=np.array(es), y=np.array(ys), z=np.array(zs),
        scenario=scenario, in_audit=np.array(audits), m_audit=np.array(ms))

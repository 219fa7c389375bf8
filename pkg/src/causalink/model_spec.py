"""Declarative model-specification files for the pipeline command.

Format (one key per line, '#' comments allowed):

    y: wt82_71
    e: qsmk
    outcome: 1 + q(age) + sex + race + cat(education)
    ps: 1 + q(age) + sex + race + cat(education)
    mismatch: 2 - 0.1*age + 0.75*sex + 1.2*race + 0.5*bp_freq_col

``q(name)`` expands to the linear and squared column; ``cat(name)`` one-hot
codes the variable with the smallest observed value as reference. The
``mismatch`` entry is a fully specified linear predictor: a numeric
intercept plus coefficient*column terms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np


class SpecError(Exception):
    pass


@dataclass
class Term:
    kind: str  # intercept | linear | quadratic | categorical
    name: str | None = None


@dataclass
class MismatchTerm:
    coefficient: float
    name: str | None = None  # None => intercept


@dataclass
class PipelineSpec:
    y_col: str
    e_col: str
    outcome_terms: list = field(default_factory=list)
    ps_terms: list = field(default_factory=list)
    mismatch_terms: list = field(default_factory=list)


_TERM_RE = re.compile(r"^(q|cat)\(([A-Za-z_][\w.]*)\)$")
_COEF_TERM_RE = re.compile(r"^([-+]?\s*[\d.]+(?:[eE][-+]?\d+)?)\s*\*\s*([A-Za-z_][\w.]*)$")


def _parse_terms(expr: str) -> list[Term]:
    out = []
    for raw in expr.split("+"):
        tok = raw.strip()
        if not tok:
            raise SpecError(f"empty term in {expr!r}")
        if tok == "1":
            out.append(Term(kind="intercept"))
            continue
        m = _TERM_RE.match(tok)
        if m:
            kind = "quadratic" if m.group(1) == "q" else "categorical"
            out.append(Term(kind=kind, name=m.group(2)))
        elif re.match(r"^[A-Za-z_][\w.]*$", tok):
            out.append(Term(kind="linear", name=tok))
        else:
            raise SpecError(f"cannot parse model term {tok!r}")
    return out


def _parse_mismatch(expr: str) -> list[MismatchTerm]:
    # normalize "a - b" into "a + -b" so we can split on '+'
    # (exponent minus signs as in 1e-3 are left alone)
    normalized = re.sub(r"(?<![eE])-", "+-", expr)
    out = []
    for raw in normalized.split("+"):
        tok = raw.strip()
        if not tok:
            continue
        m = _COEF_TERM_RE.match(tok)
        if m:
            coef = float(m.group(1).replace(" ", ""))
            out.append(MismatchTerm(coefficient=coef, name=m.group(2)))
            continue
        try:
            out.append(MismatchTerm(coefficient=float(tok.replace(" ", ""))))
        except ValueError:
            raise SpecError(f"cannot parse mismatch term {tok!r}")
    if not out:
        raise SpecError("mismatch model is empty")
    return out


def parse_pipeline_spec(text: str) -> PipelineSpec:
    entries: dict[str, str] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise SpecError(f"malformed line {line!r}; expected 'key: value'")
        key, value = line.split(":", 1)
        entries[key.strip().lower()] = value.strip()
    for required in ("y", "e", "outcome", "ps", "mismatch"):
        if required not in entries:
            raise SpecError(f"missing required entry {required!r}")
    return PipelineSpec(
        y_col=entries["y"], e_col=entries["e"],
        outcome_terms=_parse_terms(entries["outcome"]),
        ps_terms=_parse_terms(entries["ps"]),
        mismatch_terms=_parse_mismatch(entries["mismatch"]))


def build_design(columns: dict, terms: list[Term]) -> tuple[np.ndarray, list[str]]:
    """Expand the term list against named data columns."""
    n = None
    for v in columns.values():
        n = np.asarray(v).shape[0]
        break
    if n is None:
        raise SpecError("no data columns supplied")
    blocks, names = [], []
    for term in terms:
        if term.kind == "intercept":
            blocks.append(np.ones((n, 1)))
            names.append("1")
            continue
        if term.name not in columns:
            raise SpecError(f"column {term.name!r} not found in data")
        col = np.asarray(columns[term.name], dtype=float).reshape(-1, 1)
        if term.kind == "linear":
            blocks.append(col)
            names.append(term.name)
        elif term.kind == "quadratic":
            blocks.append(np.hstack([col, col ** 2]))
            names.extend([term.name, f"{term.name}^2"])
        else:  # categorical, reference = smallest observed value
            levels = np.unique(col)
            for lvl in levels[1:]:
                blocks.append((col == lvl).astype(float))
                names.append(f"{term.name}=={lvl:g}")
    return np.hstack(blocks), names


def mismatch_linear_predictor(columns: dict,
                              terms: list[MismatchTerm]) -> np.ndarray:
    eta = None
    for t in terms:
        if t.name is None:
            contrib = t.coefficient
        else:
            if t.name not in columns:
                raise SpecError(f"column {t.name!r} not found in data")
            contrib = t.coefficient * np.asarray(columns[t.name], dtype=float)
        eta = contrib if eta is None else eta + contrib

    n = max(np.asarray(v).shape[0] for v in columns.values()) if columns else 0
    return np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()


def mismatch_design(columns: dict,
                    terms: list[MismatchTerm]) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix and coefficient vector of the mismatch model (intercept
    first)."""
    n = max(np.asarray(v).shape[0] for v in columns.values())
    cols = [np.ones(n)]
    coefs = [0.0]
    for t in terms:
        if t.name is None:
            coefs[0] += t.coefficient
        else:
            cols.append(np.asarray(columns[t.name], dtype=float))
            coefs.append(t.coefficient)
    return np.column_stack(cols), np.asarray(coefs, dtype=float)

"""Documented CSV schemas accepted by the renderer, with validation that
reports an explicit column diff on mismatch."""

import csv
import io


BIAS_SURFACE_COLUMNS = ("scenario", "beta", "phi", "bias_over_alpha")

# summary.csv as written by `causalink simulate`; `coverage`, `mean_se`, and
# `mc_se_coverage` may be empty for estimators without interval estimates,
# and the whole coverage column may be absent in hand-built summaries.
SUMMARY_REQUIRED = ("estimator_id", "abs_bias", "sd")
SUMMARY_OPTIONAL = ("scenario", "mean", "bias", "coverage", "mean_se",
                    "mc_se_bias", "mc_se_coverage", "n_reps", "n_failures",
                    "clip_total")


class SchemaError(Exception):
    """Input CSV does not match the documented schema."""


def _column_diff(header, required, optional=()):
    missing = [c for c in required if c not in header]
    unexpected = [c for c in header
                  if c not in required and c not in optional]
    parts = []
    if missing:
        parts.append("missing columns: " + ", ".join(missing))
    if unexpected:
        parts.append("unexpected columns: " + ", ".join(unexpected))
    return "; ".join(parts)


def read_table(path):
    """Read a CSV into (header, rows-as-dicts); empty file is an error."""
    with open(path, newline="") as fh:
        text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise SchemaError(f"{path}: empty CSV, nothing to render")
    rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: CSV has a header but no data rows")
    return list(reader.fieldnames), rows


def validate_bias_surface(path):
    header, rows = read_table(path)
    diff = _column_diff(header, BIAS_SURFACE_COLUMNS)
    if diff:
        raise SchemaError(f"{path}: bias-surface schema mismatch ({diff})")
    try:
        parsed = [(r["scenario"], float(r["beta"]), float(r["phi"]),
                   float(r["bias_over_alpha"])) for r in rows]
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: non-numeric cell ({exc})") from exc
    return parsed


def validate_sim_summary(path):
    header, rows = read_table(path)
    diff = _column_diff(header, SUMMARY_REQUIRED, SUMMARY_OPTIONAL)
    if diff:
        raise SchemaError(f"{path}: summary schema mismatch ({diff})")
    parsed = []
    for r in rows:
        try:
            cvg = r.get("coverage")
            parsed.append({
                "scenario": r.get("scenario", ""),
                "estimator_id": r["estimator_id"],
                "abs_bias": float(r["abs_bias"]),
                "sd": float(r["sd"]),
                "coverage": float(cvg) if cvg not in (None, "") else None,
            })
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: non-numeric cell ({exc})") from exc
    return parsed

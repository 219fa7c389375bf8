import csv
import json

import numpy as np
import pytest

from causalink import cli, data_model
from causalink.data_model import Scenario

from conftest import make_dataset


def _write_dataset(tmp_path, n=150, scenario=Scenario.II, audit=0.3, seed=90):
    rng = np.random.default_rng(seed)
    ds, _ = make_dataset(rng, n, scenario, audit_fraction=audit)
    path = tmp_path / "data.csv"
    path.write_text(data_model.to_csv(ds))
    return path


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_estimate_basic(tmp_path, capsys):
    data = _write_dataset(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["estimate", "--input", str(data), "--scenario", "II",
                     "--estimators", "o,dr,plain", "--out", str(out)])
    assert code == 0
    rows = _read_csv(out / "estimate.csv")
    assert [r["estimator_id"] for r in rows] == ["o", "dr", "plain"]
    for r in rows:
        assert np.isfinite(float(r["tau_hat"]))
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "estimate"
    assert manifest["config"]["scenario"] == "II"
    printed = [json.loads(ln) for ln in
               capsys.readouterr().out.strip().splitlines()]
    assert {p["estimator_id"] for p in printed} == {"o", "dr", "plain"}


def test_estimate_audit_estimators(tmp_path):
    data = _write_dataset(tmp_path, n=300, audit=0.4, seed=91)
    out = tmp_path / "out"
    code = cli.main(["estimate", "--input", str(data), "--scenario", "II",
                     "--estimators", "ps_audit,dr_audit", "--out", str(out)])
    assert code == 0
    rows = _read_csv(out / "estimate.csv")
    assert {r["estimator_id"] for r in rows} == {"ps_audit", "dr_audit"}


def test_estimate_missing_input_is_exit_2(tmp_path):
    assert cli.main(["estimate", "--input", str(tmp_path / "nope.csv"),
                     "--scenario", "I", "--out", str(tmp_path / "o")]) == 2


def test_estimate_missing_column_is_exit_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,x1,z1\n1.0,1.0,1.0\n")
    assert cli.main(["estimate", "--input", str(bad), "--scenario", "I",
                     "--out", str(tmp_path / "o")]) == 2


def test_estimate_bad_flags_are_exit_2(tmp_path):
    data = _write_dataset(tmp_path)
    base = ["estimate", "--input", str(data), "--scenario", "II",
            "--out", str(tmp_path / "o")]
    assert cli.main(base + ["--estimators", "frobnicate"]) == 2
    assert cli.main(base + ["--sigma", "sometimes"]) == 2
    assert cli.main(base + ["--mixture", "psychic"]) == 2
    assert cli.main(["estimate", "--input", str(data), "--scenario", "IV",
                     "--out", str(tmp_path / "o")]) == 2


def test_estimate_audit_requirement_is_exit_2(tmp_path):
    data = _write_dataset(tmp_path, audit=0.0, seed=92)
    assert cli.main(["estimate", "--input", str(data), "--scenario", "II",
                     "--estimators", "ps_audit",
                     "--out", str(tmp_path / "o")]) == 2


def test_simulate_small_run(tmp_path, capsys):
    out = tmp_path / "sim"
    code = cli.main(["simulate", "--scenario", "I", "--n", "250",
                     "--reps", "3", "--estimators", "plain,o_ig",
                     "--out", str(out)])
    assert code == 0
    summary = _read_csv(out / "summary.csv")
    assert {r["estimator_id"] for r in summary} == {"plain", "o_ig"}
    assert all(r["scenario"] == "I" for r in summary)
    estimates = _read_csv(out / "estimate.csv")
    assert len(estimates) == 6  # 2 estimators x 3 reps
    assert "tau*" in capsys.readouterr().out


def test_simulate_requires_scenario_without_preset(tmp_path):
    assert cli.main(["simulate", "--n", "100",
                     "--out", str(tmp_path / "o")]) == 2


def test_simulate_preset_with_overrides(tmp_path):
    out = tmp_path / "sim"
    code = cli.main(["simulate", "--preset", "fig2", "--scenario", "I",
                     "--reps", "3", "--out", str(out)])
    assert code == 0
    summary = _read_csv(out / "summary.csv")
    assert [r["estimator_id"] for r in summary] == ["naive"]
    assert summary[0]["n_reps"] == "3"


def test_bias_surface_outputs(tmp_path):
    out = tmp_path / "bias"
    code = cli.main(["bias-surface", "--beta-min", "-1", "--beta-max", "1",
                     "--phi-min", "-1", "--phi-max", "1",
                     "--resolution", "2", "--out", str(out)])
    assert code == 0
    rows = _read_csv(out / "bias_surface.csv")
    assert len(rows) == 3 * 4
    assert {r["scenario"] for r in rows} == {"I", "II", "III"}


def test_bias_surface_bad_ranges(tmp_path):
    assert cli.main(["bias-surface", "--beta-min", "2", "--beta-max", "-2",
                     "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["bias-surface", "--resolution", "0",
                     "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["bias-surface", "--alpha", "0",
                     "--out", str(tmp_path / "o")]) == 2


# --- pipeline ---------------------------------------------------------------

def _pipeline_inputs(tmp_path, mismatch_line, n=220, seed=93):
    rng = np.random.default_rng(seed)
    age = rng.uniform(25.0, 70.0, n)
    sex = rng.integers(0, 2, n).astype(float)
    eta = -2.0 + 0.03 * age
    trt = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    wt = 2.0 + 0.05 * age + 1.5 * sex + 2.5 * trt + rng.standard_normal(n)
    data = tmp_path / "study.csv"
    with open(data, "w") as fh:
        fh.write("wt,trt,age,sex\n")
        for row in zip(wt, trt, age, sex):
            fh.write(",".join(repr(float(v)) if not isinstance(v, (int, np.integer))
                              else str(int(v)) for v in row) + "\n")
    spec = tmp_path / "model.spec"
    spec.write_text(
        "y: wt\ne: trt\noutcome: 1 + age + sex\nps: 1 + age\n"
        f"mismatch: {mismatch_line}\n")
    return data, spec


def test_pipeline_zero_mismatch_reduces_to_face_value(tmp_path, capsys):
    data, spec = _pipeline_inputs(tmp_path, "-30")
    out = tmp_path / "pipe"
    code = cli.main(["pipeline", "--data", str(data), "--model-spec",
                     str(spec), "--reps", "2", "--audit-fraction", "0.1",
                     "--out", str(out)])
    assert code == 0
    rows = {r["estimator_id"]: r for r in _read_csv(out / "table4.csv")}
    # with the mismatch probability driven to zero every replication sees
    # the original data, so the contaminated rows equal the clean rows
    assert float(rows["plain"]["mean"]) == pytest.approx(
        float(rows["plain_clean"]["mean"]), abs=1e-10)
    assert float(rows["plain"]["sd"]) == 0.0
    assert float(rows["o_ig"]["mean"]) == pytest.approx(
        float(rows["o_clean"]["mean"]), abs=1e-10)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["mean_mismatch_rate"] == pytest.approx(0.0,
                                                                     abs=1e-9)
    assert "mismatch rate" in capsys.readouterr().out


def test_pipeline_with_positive_mismatch_rate(tmp_path):
    data, spec = _pipeline_inputs(tmp_path, "-3 + 0.03*age", seed=94)
    out = tmp_path / "pipe"
    code = cli.main(["pipeline", "--data", str(data), "--model-spec",
                     str(spec), "--reps", "2", "--audit-fraction", "0.2",
                     "--out", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    rate = manifest["config"]["mean_mismatch_rate"]
    assert 0.02 < rate < 0.6
    rows = {r["estimator_id"] for r in _read_csv(out / "table4.csv")}
    assert {"plain_clean", "plain", "ps_ig", "o_adj", "dr_adj"} <= rows


def test_pipeline_missing_files_and_columns(tmp_path):
    data, spec = _pipeline_inputs(tmp_path, "-30", seed=95)
    assert cli.main(["pipeline", "--data", str(tmp_path / "none.csv"),
                     "--model-spec", str(spec),
                     "--out", str(tmp_path / "o")]) == 2
    bad_spec = tmp_path / "bad.spec"
    bad_spec.write_text("y: wt\ne: trt\noutcome: 1 + bmi\nps: 1\nmismatch: -1\n")
    assert cli.main(["pipeline", "--data", str(data), "--model-spec",
                     str(bad_spec), "--out", str(tmp_path / "o")]) == 2

import json

import pytest

from gfm_thevenin.cli import EXIT_INVALID, EXIT_NONCOMPLIANT, EXIT_OK, SCHEMA, main

from conftest import WORKERS

IDVS = {"$schema": SCHEMA, "device": "idvs", "idvs": {"x": 0.48, "x_over_r": 10.0}}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.fixture(scope="module")
def scanned(tmp_path_factory):
    d = tmp_path_factory.mktemp("scan")
    cfg = write(d, IDVS)
    assert main(["scan", "--config", cfg, "--out", str(d), "--parallel", str(WORKERS), "--stable-output"]) == 0
    return d


def test_scan_writes_grid_minus_guard(scanned):
    rows = (scanned / "spectrum.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 29
    meta = json.loads((scanned / "spectrum.json").read_text())["meta"]
    assert len(meta["guarded_hz"]) == 1 and abs(meta["guarded_hz"][0] - 60.0) < 1.0
    assert json.loads((scanned / "run.json").read_text())["n_points"] == 29


def test_scan_reruns_are_byte_identical(scanned, tmp_path):
    cfg = write(tmp_path, IDVS)
    args = ["scan", "--config", cfg, "--out", str(tmp_path), "--parallel", str(WORKERS), "--stable-output"]
    assert main(args) == 0
    for name in ("spectrum.csv", "spectrum.json", "run.json"):
        assert (tmp_path / name).read_bytes() == (scanned / name).read_bytes()


def test_worker_count_does_not_change_values(scanned, tmp_path):
    cfg = write(tmp_path, IDVS)
    assert main(["scan", "--config", cfg, "--out", str(tmp_path), "--parallel", "3", "--stable-output"]) == 0
    assert (tmp_path / "spectrum.csv").read_bytes() == (scanned / "spectrum.csv").read_bytes()


def test_stable_output_omits_timestamp(scanned, tmp_path):
    assert "created_unix" not in json.loads((scanned / "run.json").read_text())
    cfg = write(tmp_path, IDVS)
    main(["analytic", "--config", cfg, "--out", str(tmp_path)])
    assert "created_unix" in json.loads((tmp_path / "run.json").read_text())


def test_points_override_is_validated(tmp_path, capsys):
    assert main(["scan", "--config", write(tmp_path, IDVS), "--out", str(tmp_path), "--points", "0"]) == EXIT_INVALID
    assert "scan.n_points" in capsys.readouterr().err


def test_unknown_config_field_is_named(tmp_path, capsys):
    doc = {**IDVS, "scan": {"n_pionts": 5}}
    assert main(["scan", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "scan.n_pionts" in capsys.readouterr().err


def test_wrong_schema_rejected(tmp_path, capsys):
    doc = {**IDVS, "$schema": "gfm-thevenin/run-config/v0"}
    assert main(["scan", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "$schema" in capsys.readouterr().err


def test_fit_of_ideal_source_passes(scanned, tmp_path, capsys):
    rc = main(["fit", str(scanned / "spectrum.csv"), "--out", str(tmp_path)])
    assert rc == EXIT_OK
    rep = json.loads((tmp_path / "fit.json").read_text())
    assert rep["pass"] and rep["x_eff"] == pytest.approx(0.48, abs=1e-4)
    assert (tmp_path / "fit_overlay.csv").read_text().startswith("f_hz,mag_full,mag_th")
    assert "PASS" in capsys.readouterr().out


def test_fit_from_json_spectrum(scanned, tmp_path):
    assert main(["comply", str(scanned / "spectrum.json"), "--out", str(tmp_path)]) == EXIT_OK
    assert not (tmp_path / "fit_overlay.csv").exists()


def test_fit_needs_qd_column(scanned, tmp_path):
    lines = (scanned / "spectrum.csv").read_text().splitlines()
    blanked = [lines[0]] + [",".join(c if k not in (5, 6) else "" for k, c in enumerate(l.split(",")))
                            for l in lines[1:]]
    p = tmp_path / "noqd.csv"
    p.write_text("\n".join(blanked) + "\n")
    assert main(["fit", str(p), "--out", str(tmp_path)]) == EXIT_INVALID


def test_tight_threshold_fails_compliance(scanned, tmp_path):
    assert main(["comply", str(scanned / "spectrum.csv"), "--out", str(tmp_path), "--eps", "1e-9"]) == EXIT_NONCOMPLIANT
    assert json.loads((tmp_path / "fit.json").read_text())["eps_satisfied"] is False


def test_pv_of_ideal_source_matches_closed_form(tmp_path):
    doc = {"$schema": SCHEMA, "device": "idvs", "idvs": {"r": 0.0, "l": 0.5},
           "pv": {"base_load": [0.1, 0.0], "step": [0.05, 0.0]}}
    assert main(["pv", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_OK
    s = json.loads((tmp_path / "pv_summary.json").read_text())
    assert s["analytic"]["p_max"] == pytest.approx(1.0, abs=1e-6)
    assert s["full"]["p_max"] == pytest.approx(1.0, abs=0.01)
    assert (tmp_path / "pv_full.csv").exists()


def test_step_with_supplied_fit(scanned, tmp_path):
    fit_dir = tmp_path / "fit"
    main(["fit", str(scanned / "spectrum.csv"), "--out", str(fit_dir)])
    doc = {**IDVS, "idvs": {"x": 0.48, "x_over_r": 10.0, "v_id": 1.02}}
    rc = main(["step", "--config", write(tmp_path, doc), "--out", str(tmp_path), "--fit", str(fit_dir / "fit.json")])
    assert rc == EXIT_OK
    assert json.loads((tmp_path / "step_summary.json").read_text())["rms_error_q"] < 1e-3


def test_analytic_zero_step_is_flat(tmp_path):
    doc = {"$schema": SCHEMA, "analytic": {"x": 0.33, "x_over_r": 10.0, "dv": 0.0, "ddelta_deg": 0.0}}
    assert main(["analytic", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_OK
    rows = [l.split(",") for l in (tmp_path / "analytic_pq.csv").read_text().splitlines()[1:]]
    assert {r[1] for r in rows} == {rows[0][1]} and {r[2] for r in rows} == {rows[0][2]}


def test_analytic_empty_time_grid(tmp_path, capsys):
    doc = {"$schema": SCHEMA, "analytic": {"x": 0.33, "x_over_r": 10.0, "t": []}}
    assert main(["analytic", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "analytic.t" in capsys.readouterr().err


def test_analytic_lossless_warns(tmp_path, capsys):
    doc = {"$schema": SCHEMA, "analytic": {"r": 0.0, "l": 0.33}}
    assert main(["analytic", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_OK
    assert "never decays" in capsys.readouterr().err
    assert json.loads((tmp_path / "run.json").read_text())["undamped"] is True


def test_case_one(tmp_path, capsys):
    doc = {"$schema": SCHEMA, "case": {"duration": 0.02}}
    assert main(["case", "--case", "I", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "case_I.json").read_text())
    assert [v["device"] for v in rep["variants"]] == ["gfm", "idvs", "idvs"]
    assert len(capsys.readouterr().out.strip().splitlines()) == 3


def test_unknown_device(tmp_path, capsys):
    doc = {"$schema": SCHEMA, "device": "statcom"}
    assert main(["scan", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "device" in capsys.readouterr().err

import json
import subprocess
import sys

import numpy as np
import pytest

from ramantm.cli import OUTPUT_ENV, ScenarioError, list_scenarios, load_config, main, validate

SMALL = {"time_grid": {"dt": 1e-9, "n_samples": 512}, "params": {"n_z": 64}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def _result_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_catalog_size_and_validity():
    cat = list_scenarios()
    assert len(cat) >= 8
    for entry in cat:
        validate(load_config(entry["name"]))
    crit = {e["criterion"] for e in cat}
    assert {1, 2, 3, 4, 5, 6, 7, 9} <= crit


def test_list_command(capsys):
    assert main(["list", "--json"]) == 0
    names = [e["name"] for e in json.loads(capsys.readouterr().out)]
    assert "c02_crosstalk" in names


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out)["additionalProperties"] is False


def test_validate_ok(capsys):
    assert main(["validate", "c05_filter_ratios"]) == 0
    assert _last_json(capsys)["status"] == "ok"


def test_malformed_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    out = tmp_path / "out"
    assert main(["run", str(p), "--out", str(out)]) == 2
    err = _last_json(capsys)
    assert err["status"] == "error" and err["code"] == "config.malformed_json"
    assert not out.exists() or not any(out.iterdir())


@pytest.mark.parametrize(
    "cfg",
    [
        {"kind": "crosstalk", "bogus": 1},
        {"kind": "crosstalk", "options": {"bogus": 1}},
        {"kind": "filter_ratios"},
        {"kind": "nonsense"},
        {"kind": "crosstalk", "coupling": -1.0},
    ],
)
def test_schema_violations(tmp_path, capsys, cfg):
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, cfg), "--out", str(out)]) == 2
    assert _last_json(capsys)["code"].startswith("schema.")
    assert not out.exists() or not any(out.iterdir())
    with pytest.raises(ScenarioError):
        validate(cfg)


def test_missing_config(capsys):
    assert main(["run", "no_such_scenario"]) == 2
    assert _last_json(capsys)["code"] == "config.not_found"


def test_module_error_leaves_no_outputs(tmp_path, capsys):
    cfg = {"kind": "convert_mode", "coupling": 0.6, **SMALL, "options": {"n_max": 2, "compensate": {"input": 1, "output": 0}}}
    cfg["basis"] = {"n_modes": 2, "fwhm": 2e-6}  # modes far wider than the grid
    out = tmp_path / "out"
    code = main(["run", _write(tmp_path, cfg), "--out", str(out)])
    assert code == 1
    err = _last_json(capsys)
    assert err["status"] == "error" and "." in err["code"]
    assert not any(out.iterdir())


def test_crosstalk_end_to_end(tmp_path, capsys):
    cfg = {"name": "xt", "kind": "crosstalk", "coupling": 0.60, "basis": {"n_modes": 5}}
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path / "out")]) == 0
    d = tmp_path / "out" / "xt"
    m = np.loadtxt(d / "crosstalk_C0.6.csv", delimiter=",", ndmin=2)
    if m.shape[0] == 6:  # header row
        m = m[1:]
    assert np.allclose(np.diag(m), 0.300, atol=0.01)
    assert m[1, 0] <= 0.002
    man = json.loads((d / "manifest.json").read_text())
    assert {"tool", "version", "config_sha256", "seed", "wall_time_s", "files"} <= set(man)
    assert "results.json" in man["files"]


def test_calibrate_writes_kappa(tmp_path, capsys):
    assert main(["calibrate", "--out", str(tmp_path)]) == 0
    res = _last_json(capsys)
    assert res["kappa_cal"] == pytest.approx(0.9986941249703158, rel=1e-6)
    cal = json.loads((tmp_path / "calibrate" / "calibration.json").read_text())
    assert cal["matched_eta"]["0.6"] == pytest.approx(0.300, abs=1e-9)


@pytest.mark.parametrize(
    "cfg",
    [
        {"kind": "crosstalk", "coupling": [0.3, 0.6, 0.9], "basis": {"n_modes": 3, "fwhm": 50e-9}},
        {"kind": "optimize", "coupling": 1.0, "basis": {"n_modes": 2, "fwhm": 50e-9}, "options": {"max_iters": 4}},
        {"kind": "tomography", "coupling": 0.6, "seed": 5, "options": {"dim": 2, "counts": 20000, "n_controls": 50}},
        {"kind": "tomography", "seed": 3, "options": {"dim": 2, "synthetic_trials": 3}},
    ],
    ids=["crosstalk", "optimize", "tomography", "synthetic"],
)
def test_determinism_across_jobs_and_reruns(tmp_path, cfg):
    cfg = {"name": "det", **SMALL, **cfg}
    path = _write(tmp_path, cfg)
    runs = []
    for k, jobs in enumerate((1, 2, 2)):
        out = tmp_path / f"o{k}"
        assert main(["run", path, "--out", str(out), "--jobs", str(jobs)]) == 0
        runs.append(_result_bytes(out / "det"))
    assert runs[0] == runs[1] == runs[2]


def test_seed_override_changes_noisy_results(tmp_path):
    cfg = {"name": "s", **SMALL, "kind": "tomography", "coupling": 0.6, "options": {"dim": 2, "counts": 20000, "n_controls": 20}}
    path = _write(tmp_path, cfg)
    assert main(["run", path, "--out", str(tmp_path / "a"), "--seed", "1"]) == 0
    assert main(["run", path, "--out", str(tmp_path / "b"), "--seed", "2"]) == 0
    a = (tmp_path / "a" / "s" / "dataset_C0.6.csv").read_bytes()
    b = (tmp_path / "b" / "s" / "dataset_C0.6.csv").read_bytes()
    assert a != b
    assert json.loads((tmp_path / "a" / "s" / "config.json").read_text())["seed"] == 1


def test_output_dir_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "envout"))
    cfg = {"name": "ratios", "kind": "filter_ratios", "coupling": 0.6, "options": {"components": [1, 3], "weights": [1, 2]}}
    assert main(["run", _write(tmp_path, cfg)]) == 0
    assert (tmp_path / "envout" / "ratios" / "ratios.csv").is_file()


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "ramantm.cli", "validate", "c02_crosstalk"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["status"] == "ok"

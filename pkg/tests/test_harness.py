"""Config validation, pipeline orchestration, reporting and the CLI."""

import json
from pathlib import Path

import numpy as np
import pytest

from qbsde import (
    InvalidArgument,
    ReportIncomplete,
    SchemaViolation,
    emit_report,
    load_config,
    run_experiment,
    validate_config,
)
from qbsde.cli import main as cli_main
from qbsde.errors import UnknownRegistryName

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = {
    "grid": {"T": 1.0, "steps": 4},
    "sampling": {"paths": 10, "seed": 1},
}


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


# ------------------------------------------------------------- validation

def test_minimal_config_defaults_materialized():
    cfg = validate_config(dict(MINIMAL))
    assert cfg["model"]["mode"] == "F1"
    assert cfg["generator"]["f"]["name"] == "zero"
    assert cfg["generator"]["constants"]["K_z"] == 1.0
    assert cfg["sampling"]["kind"] == "gaussian"
    assert cfg["solvers"] == [] and cfg["diagnostics"] == []


def test_config_hash_key_order_independent():
    a = validate_config({"grid": {"T": 1.0, "steps": 4},
                         "sampling": {"seed": 1, "paths": 10}})
    b = validate_config({"sampling": {"paths": 10, "seed": 1},
                         "grid": {"steps": 4, "T": 1.0}})
    assert a.config_hash == b.config_hash


def test_seed_required():
    with pytest.raises(SchemaViolation, match="seed is required"):
        validate_config({"grid": {"T": 1.0, "steps": 4},
                         "sampling": {"paths": 10}})


def test_r_schema_message():
    bad = dict(MINIMAL, generator={"constants": {"r": 1.2}})
    with pytest.raises(SchemaViolation, match=r"r must lie in \[0,1\)"):
        validate_config(bad)


def test_unknown_registry_name_lists_available():
    bad = dict(MINIMAL, generator={"g": {"name": "nonexistent"}})
    with pytest.raises(UnknownRegistryName) as e:
        validate_config(bad)
    assert "half_square" in str(e.value)


def test_unknown_solver_id():
    bad = dict(MINIMAL, solvers=[{"id": "mystery"}])
    with pytest.raises(SchemaViolation, match="mystery"):
        validate_config(bad)


def test_grid_section_required():
    with pytest.raises(SchemaViolation, match="grid"):
        validate_config({"sampling": {"paths": 10, "seed": 1}})


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"grid": {"T": 1.0,\n  "steps": }}')
    with pytest.raises(InvalidArgument, match="line 2"):
        load_config(p)


# --------------------------------------------------------------- pipeline

def test_zero_pipeline(tmp_path):
    cfg = validate_config(dict(
        MINIMAL,
        solvers=[{"id": "lsmc", "options": {"trunc_level": None}}],
        diagnostics=[{"id": "z_growth", "options": {"r": 0.0}}]))
    record = run_experiment(cfg, tmp_path / "out")
    assert record.status == "complete"
    assert record.all_pass
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["config_hash"] == cfg.config_hash
    assert "timings" not in summary  # summary must be deterministic


def test_rerun_is_byte_identical(tmp_path):
    cfg = validate_config(dict(
        MINIMAL,
        model={"drift": {"name": "ou", "params": {"kappa": 0.5}},
               "sigma": {"name": "constant"}, "mode": "F1", "x0": [0.0]},
        generator={"g": {"name": "half_square"},
                   "h": {"name": "terminal_abs", "params": {"scale": 0.2}},
                   "constants": {"K_z": 1.0, "K_h": 0.2, "r": 0.0}},
        solvers=[{"id": "lsmc"}]))
    run_experiment(cfg, tmp_path / "a", threads=1)
    run_experiment(cfg, tmp_path / "b", threads=7)
    for name in ("summary.json", "paths.bin", "noise.bin",
                 "solution_lsmc_Y.bin", "solution_lsmc_Z.bin"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_failing_solver_recorded_pipeline_continues(tmp_path):
    cfg = validate_config(dict(
        MINIMAL,
        solvers=[
            {"id": "cole_hopf", "name": "bad"},  # needs half_square driver;
            # zero-drift model is fine but the lsmc branch must still run
            {"id": "lsmc", "name": "good"},
        ],
        generator={"f": {"name": "linear_y", "params": {"a": 1e9}},
                   "xi": {"name": "constant", "params": {"c": 1e3}},
                   "constants": {"K_y": 1e9}}))
    record = run_experiment(cfg, tmp_path / "out")
    stages = {s["stage"]: s["status"] for s in record.stages}
    assert stages["solver:good"] == "error" or stages["solver:good"] == "ok"
    # at least one branch failed and the run is marked partial, not raised
    assert record.status == "partial"
    assert any(s["status"] == "error" for s in record.stages)


def test_emit_report_json_and_csv(tmp_path):
    cfg = validate_config(dict(
        MINIMAL,
        solvers=[{"id": "lsmc"}],
        diagnostics=[{"id": "z_growth", "options": {"r": 0.0}}]))
    record = run_experiment(cfg, tmp_path / "out")
    (json_path,) = emit_report(record, "json")
    payload = json.loads(json_path.read_text())
    assert payload["reports"]["z_growth"]["pass"] is True
    (csv_path,) = emit_report(record, "csv")
    header = csv_path.read_text().splitlines()[0]
    assert header == "t,mean_ratio,q999_ratio,max_ratio"


def test_emit_report_incomplete(tmp_path):
    from qbsde import RunRecord
    empty = RunRecord(config_hash="x", out_dir=str(tmp_path))
    with pytest.raises(ReportIncomplete):
        emit_report(empty, "json")


# -------------------------------------------------------------------- CLI

def test_cli_validate_ok(tmp_path):
    p = _write(tmp_path, MINIMAL)
    assert cli_main(["validate", "--config", str(p)]) == 0


def test_cli_validate_bad_config(tmp_path, capsys):
    p = _write(tmp_path, {"grid": {"T": 1.0, "steps": 4},
                          "sampling": {"paths": 10}})
    assert cli_main(["validate", "--config", str(p)]) == 2
    assert "seed is required" in capsys.readouterr().err


def test_cli_run_and_report(tmp_path):
    data = dict(MINIMAL,
                solvers=[{"id": "lsmc"}],
                diagnostics=[{"id": "z_growth", "options": {"r": 0.0}}])
    p = _write(tmp_path, data)
    out = tmp_path / "out"
    assert cli_main(["run", "--config", str(p), "--out", str(out)]) == 0
    assert cli_main(["report", "--out", str(out), "--format", "csv"]) == 0
    assert (out / "report_z_growth.csv").exists()


def test_cli_seed_override_changes_noise(tmp_path):
    data = dict(MINIMAL, solvers=[{"id": "lsmc"}])
    p = _write(tmp_path, data)
    cli_main(["run", "--config", str(p), "--out", str(tmp_path / "a")])
    cli_main(["run", "--config", str(p), "--out", str(tmp_path / "b"),
              "--seed-override", "99"])
    a = (tmp_path / "a" / "noise.bin").read_bytes()
    b = (tmp_path / "b" / "noise.bin").read_bytes()
    assert a != b
    ha = json.loads((tmp_path / "a" / "summary.json").read_text())["config_hash"]
    hb = json.loads((tmp_path / "b" / "summary.json").read_text())["config_hash"]
    assert ha != hb


def test_cli_list_registry(capsys):
    assert cli_main(["list-registry"]) == 0
    out = capsys.readouterr().out
    assert "drift:" in out and "ou" in out


def test_cli_threads_env_accepted(tmp_path, monkeypatch):
    monkeypatch.setenv("QBSDE_THREADS", "2")
    data = dict(MINIMAL, solvers=[{"id": "lsmc"}])
    p = _write(tmp_path, data)
    assert cli_main(["run", "--config", str(p),
                     "--out", str(tmp_path / "out")]) == 0


def test_shipped_configs_validate():
    for cfg_path in sorted(CONFIG_DIR.glob("*.json")):
        cfg = load_config(cfg_path)
        assert cfg.config_hash

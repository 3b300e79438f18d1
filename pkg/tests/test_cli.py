"""End-to-end tests of the command-line surface."""

from __future__ import annotations

import json

import numpy as np
import pytest
import yaml

from portflow.cli import main
from portflow.io import load_flows


def write_config(path, payload):
    path.write_text(yaml.safe_dump(payload))
    return str(path)


@pytest.fixture
def workspace(tmp_path):
    """Config for a simulate run plus a second config reusing its outputs."""
    sim_dir = tmp_path / "sim"
    sim_config = write_config(tmp_path / "simulate.yaml", {
        "seed": 7,
        "paths": {"output": str(sim_dir)},
        "synthetic": {"K": 4, "horizon_days": 200},
    })
    assert main(["simulate", "--config", sim_config]) == 0
    truth = json.loads((sim_dir / "truth.json").read_text())
    run_dir = tmp_path / "run"
    run_config = write_config(tmp_path / "run.yaml", {
        "seed": 7,
        "paths": {
            "output": str(run_dir),
            "flows": str(sim_dir / "flows.csv"),
            "distances": str(sim_dir / "distances.csv"),
        },
        "model": {
            "ports": truth["ports"],
            "parameters": {
                "congestion": truth["congestion"],
                "transport": truth["transport"],
                "capacities": truth["capacities"],
                "values": truth["values"],
            },
        },
        "inference": {"good": truth["regressed_good"]},
    })
    return tmp_path, sim_dir, run_dir, run_config, truth


def test_simulate_writes_flows_distances_truth_manifest(workspace):
    _, sim_dir, _, _, truth = workspace
    assert (sim_dir / "flows.csv").exists()
    assert (sim_dir / "distances.csv").exists()
    assert truth["truncated"] == 0
    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    series = load_flows(sim_dir / "flows.csv")
    assert not series.is_empty


def test_solve_outputs_match_truth(workspace):
    _, _, run_dir, run_config, truth = workspace
    assert main(["solve", "--config", run_config]) == 0
    summary = json.loads((run_dir / "solve.json").read_text())
    assert summary["converged"]
    phi = {}
    with open(run_dir / "phi.csv") as handle:
        next(handle)
        for line in handle:
            _, port, value = line.strip().split(",")
            phi[port] = float(value)
    expected = dict(zip(truth["ports"], truth["phi"][0]))
    for port, value in expected.items():
        assert phi[port] == pytest.approx(value, rel=1e-6)
    assert "representative" in summary
    assert summary["representative"]["max_gap_to_fixed_point"] <= 1e-6


def test_check_reports_structural_degeneracy(workspace):
    _, _, run_dir, run_config, _ = workspace
    assert main(["check", "--config", run_config]) == 0
    payload = json.loads((run_dir / "check.json").read_text())
    assert payload["verdict"] == "degenerate"
    assert abs(payload["determinant"]) <= payload["threshold"]


def test_infer_recovers_parameters(workspace):
    _, _, run_dir, run_config, truth = workspace
    assert main(["infer", "--config", run_config]) == 0
    payload = json.loads((run_dir / "calibration.json").read_text())
    np.testing.assert_allclose(payload["congestion"], truth["congestion"],
                               rtol=1e-3)
    np.testing.assert_allclose(payload["values"], truth["values"][0],
                               atol=1e-3)
    assert (run_dir / "coefficients.csv").exists()
    assert (run_dir / "a_matrix.csv").exists()


def test_validate_passes_on_solve_outputs(workspace):
    tmp_path, _, run_dir, run_config, truth = workspace
    assert main(["solve", "--config", run_config]) == 0
    assert main(["validate", "--config", run_config]) == 0
    payload = json.loads((run_dir / "validate.json").read_text())
    assert payload["passes"]


def test_report_collects_tables(workspace):
    tmp_path, _, run_dir, run_config, _ = workspace
    assert main(["solve", "--config", run_config]) == 0
    assert main(["infer", "--config", run_config]) == 0
    report_dir = tmp_path / "report"
    report_config = write_config(tmp_path / "report.yaml", {
        "paths": {"output": str(report_dir), "results": str(run_dir)},
    })
    assert main(["report", "--config", report_config]) == 0
    assert (report_dir / "phi_bar.csv").exists()
    assert (report_dir / "parameters_bar.csv").exists()
    assert (report_dir / "route_coefficients.csv").exists()


def test_missing_config_is_input_error(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "absent.yaml")]) == 1
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "FileNotFoundError"


def test_bad_config_is_input_error(tmp_path, capsys):
    config = write_config(tmp_path / "bad.yaml", {"nonsense": 1})
    assert main(["solve", "--config", config]) == 1
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "ConfigError"


def test_report_without_outputs_is_input_error(tmp_path, capsys):
    config = write_config(tmp_path / "r.yaml",
                          {"paths": {"output": str(tmp_path / "none")}})
    assert main(["report", "--config", config]) == 1
    assert "error" in capsys.readouterr().err


def test_simulate_requires_synthetic_block(tmp_path, capsys):
    config = write_config(tmp_path / "s.yaml",
                          {"paths": {"output": str(tmp_path / "out")}})
    assert main(["simulate", "--config", config]) == 1


def test_manifest_reruns_are_identical(workspace):
    _, _, run_dir, run_config, _ = workspace
    assert main(["solve", "--config", run_config]) == 0
    first = (run_dir / "phi.csv").read_bytes(), (run_dir / "q.csv").read_bytes()
    assert main(["solve", "--config", run_config]) == 0
    second = (run_dir / "phi.csv").read_bytes(), (run_dir / "q.csv").read_bytes()
    assert first == second

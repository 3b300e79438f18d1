"""Command-line surface: solve, check, infer, simulate, validate, report.

One command is one process; every run writes its outputs plus a manifest
(config hash, seed, versions, input digests) into the configured output
directory. Exit codes: 0 success or finding, 1 input error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .equilibrium import (
    EquilibriumResult,
    build_omega,
    existence_check,
    fixed_point,
    representative_solve,
    verify_equilibrium,
)
from .errors import (
    ConfigError,
    DegenerateSystem,
    LabelMismatch,
    ParseError,
    PortflowError,
)
from .inference import (
    CrowdednessConfig,
    GaugeConfig,
    InferenceConfig,
    infer_pipeline,
)
from .io import (
    atomic_write_text,
    build_manifest,
    load_config,
    load_distances,
    load_flows,
    save_flows,
    save_matrix,
    write_manifest,
    write_table,
)
from .model import (
    ControlPolicy,
    CostParameters,
    GoodValues,
    Kernel,
    MeanField,
    PortNetwork,
)
from .synthetic import SyntheticSpec, generate_instance, simulate_series

INPUT_ERRORS = (ConfigError, ParseError, LabelMismatch, FileNotFoundError)


def _write_json(payload: dict, path: Path) -> Path:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _network_from_config(config):
    model = config.model
    ports = model.get("ports")
    if not ports:
        raise ConfigError("model.ports is required")
    distances_path = config.path("distances", required=True)
    matrix, warnings = load_distances(distances_path, ports)
    kernel_cfg = model.get("kernel", {"kind": "linear"})
    if isinstance(kernel_cfg, str):
        kernel_cfg = {"kind": kernel_cfg}
    kernel = Kernel(kind=kernel_cfg.get("kind", "linear"),
                    exponent=float(kernel_cfg.get("exponent", 1.0)))
    network = PortNetwork(tuple(ports), matrix, kernel)
    return network, warnings, [distances_path]


def _parameters_from_config(config):
    block = config.model.get("parameters")
    if not block:
        raise ConfigError("model.parameters is required")
    try:
        params = CostParameters(
            congestion=np.asarray(block["congestion"], dtype=float),
            transport=np.asarray(block["transport"], dtype=float),
            capacities=np.asarray(block["capacities"], dtype=float))
        values = GoodValues(np.asarray(block["values"], dtype=float))
    except (KeyError, ValueError) as err:
        raise ConfigError(f"bad model.parameters: {err}")
    return params, values


def _inference_config(config):
    block = config.inference
    crowd = CrowdednessConfig(shift_days=int(block.get("shift_days", 60)),
                              window_days=int(block.get("window_days", 20)))
    gauge = GaugeConfig(r_bar=float(block.get("r_bar", 1.0)),
                        r_min=float(block.get("r_min", 0.1)))
    return InferenceConfig(
        crowdedness=crowd, gauge=gauge, good=block.get("good"),
        date_start=block.get("date_start"), date_end=block.get("date_end"),
        ridge=float(block.get("ridge", 0.0)),
        n_starts=int(block.get("multi_starts", 16)), seed=config.seed)


def cmd_solve(config, config_path):
    network, warnings, inputs = _network_from_config(config)
    params, values = _parameters_from_config(config)
    solver = config.solver
    result = fixed_point(params, network, values,
                         damping=float(solver["damping"]),
                         tol=float(solver["tol"]),
                         max_iter=int(solver["max_iter"]))
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    labels = network.port_labels
    outputs = []
    phi_rows = [(n, labels[i], result.field.occupancy[n, i])
                for n in range(params.n_goods) for i in range(params.n_ports)]
    write_table(out / "phi.csv", ["good", "port", "phi"], phi_rows)
    outputs.append(out / "phi.csv")
    q_rows = [(n, labels[i], labels[j], result.policy.transitions[n, i, j])
              for n in range(params.n_goods)
              for i in range(params.n_ports) for j in range(params.n_ports)]
    write_table(out / "q.csv", ["good", "origin", "destination", "q"], q_rows)
    outputs.append(out / "q.csv")
    summary = {
        "converged": result.converged,
        "iterations": result.iterations,
        "stationarity_residual": result.stationarity_residual,
        "optimality_residual": result.optimality_residual,
        "policy_has_negative": result.policy.has_negative,
        "negative_entries": [list(map(int, t))
                             for t in result.policy.negative_entries()],
        "warnings": warnings,
    }
    if params.n_goods == 1:
        system = build_omega(params, network, values)
        try:
            rep = representative_solve(system, float(params.capacities[0]))
            write_table(out / "representative.csv", ["port", "phi"],
                        zip(labels, rep.phi))
            outputs.append(out / "representative.csv")
            summary["representative"] = {
                "pre_rescale_mass": rep.pre_rescale_mass,
                "residual": rep.residual,
                "max_gap_to_fixed_point": float(np.abs(
                    rep.phi - result.field.occupancy[0]).max()),
            }
        except DegenerateSystem as err:
            summary["representative"] = {"error": str(err)}
    outputs.append(_write_json(summary, out / "solve.json"))
    manifest = build_manifest(config_path, config, "solve", inputs, outputs)
    write_manifest(manifest, out)
    print(f"solve: converged={result.converged} "
          f"iterations={result.iterations} "
          f"residual={result.stationarity_residual:.3e}")
    return 0 if result.converged else 2


def cmd_check(config, config_path):
    network, warnings, inputs = _network_from_config(config)
    params, values = _parameters_from_config(config)
    system = build_omega(params, network, values)
    verdict = existence_check(system)
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(system.omega, network.port_labels, out / "omega.csv")
    payload = {
        "verdict": verdict.verdict,
        "determinant": system.determinant,
        "transposed_determinant": system.transposed_determinant,
        "threshold": verdict.threshold,
        "condition_estimate": (system.condition_estimate
                               if np.isfinite(system.condition_estimate)
                               else None),
        "reduced_condition": (system.reduced_condition
                              if np.isfinite(system.reduced_condition)
                              else None),
        "null_mass": system.null_mass,
        "warnings": warnings,
    }
    outputs = [out / "omega.csv", _write_json(payload, out / "check.json")]
    manifest = build_manifest(config_path, config, "check", inputs, outputs)
    write_manifest(manifest, out)
    print(f"check: verdict={verdict.verdict} det={system.determinant:.6e}")
    return 0  # degeneracy is a finding, not an error


def cmd_simulate(config, config_path):
    block = dict(config.synthetic)
    if not block:
        raise ConfigError("synthetic block is required for simulate")
    block.setdefault("seed", config.seed)
    ranges = {f"{k}_range": tuple(block.pop(k))
              for k in ("r", "c", "v", "t") if k in block}
    spec = SyntheticSpec(**{**block, **ranges})
    instance = generate_instance(spec)
    simulated = simulate_series(spec, instance)
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_flows(simulated.series, out / "flows.csv")
    save_matrix(instance.network.travel_cost, instance.network.port_labels,
                out / "distances.csv")
    truth = {
        "ports": list(instance.network.port_labels),
        "congestion": instance.params.congestion.tolist(),
        "transport": instance.params.transport.tolist(),
        "capacities": instance.params.capacities.tolist(),
        "values": instance.values.values.tolist(),
        "phi": instance.field.occupancy.tolist(),
        "mode": spec.mode,
        "truncated": simulated.truncated,
        "regressed_good": simulated.regressed_good,
        "attempts": instance.attempts,
    }
    outputs = [out / "flows.csv", out / "distances.csv",
               _write_json(truth, out / "truth.json")]
    manifest = build_manifest(config_path, config, "simulate", [], outputs)
    write_manifest(manifest, out)
    print(f"simulate: {len(simulated.series)} records, "
          f"truncated={simulated.truncated}")
    return 0


def cmd_infer(config, config_path):
    network, warnings, inputs = _network_from_config(config)
    flows_path = config.path("flows", required=True)
    series = load_flows(flows_path)
    inputs.append(flows_path)
    result = infer_pipeline(series, network, _inference_config(config))
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    K = len(result.labels)
    coeff_header = (["origin", "destination", "intercept"]
                    + [f"crowd_{lab}" for lab in result.labels]
                    + ["self_slope", "n_obs", "r_squared"])
    coeff_rows = []
    for (origin, destination), fit in sorted(result.coefficients.items()):
        coeff_rows.append([origin, destination, fit.intercept,
                           *fit.crowd_slopes, fit.self_slope, fit.n_obs,
                           fit.r_squared])
    write_table(out / "coefficients.csv", coeff_header, coeff_rows)
    save_matrix(np.nan_to_num(result.intercepts, nan=0.0), result.labels,
                out / "a_matrix.csv")
    calibration = result.calibration
    payload = {
        "good": result.good,
        "transport_cost": calibration.transport_cost,
        "congestion": calibration.congestion.tolist(),
        "values": calibration.values.tolist(),
        "gauge": calibration.gauge,
        "objective": calibration.objective,
        "solver_status": calibration.solver_status,
        "min_curvature": calibration.min_curvature,
        "route_errors": {f"{o}->{d}": msg
                         for (o, d), msg in result.route_errors.items()},
        "warnings": warnings,
    }
    outputs = [out / "coefficients.csv", out / "a_matrix.csv",
               _write_json(payload, out / "calibration.json")]
    manifest = build_manifest(config_path, config, "infer", inputs, outputs)
    write_manifest(manifest, out)
    print(f"infer: c={calibration.transport_cost:.4f} "
          f"objective={calibration.objective:.3e} "
          f"routes={len(result.coefficients)}")
    return 0


def _read_solve_outputs(solve_dir, network, params):
    labels = {label: k for k, label in enumerate(network.port_labels)}
    K, N = len(labels), params.n_goods
    phi = np.zeros((N, K))
    with open(Path(solve_dir) / "phi.csv") as handle:
        next(handle)
        for line in handle:
            good, port, value = line.strip().split(",")
            phi[int(good), labels[port]] = float(value)
    Q = np.zeros((N, K, K))
    with open(Path(solve_dir) / "q.csv") as handle:
        next(handle)
        for line in handle:
            good, origin, destination, value = line.strip().split(",")
            Q[int(good), labels[origin], labels[destination]] = float(value)
    return MeanField(phi), ControlPolicy(Q)


def cmd_validate(config, config_path):
    network, warnings, inputs = _network_from_config(config)
    params, values = _parameters_from_config(config)
    solve_dir = config.paths.get("solve", config.output_dir)
    field, policy = _read_solve_outputs(solve_dir, network, params)
    from .equilibrium import _stationarity_residual
    residual = _stationarity_residual(field, policy)
    result = EquilibriumResult(field=field, policy=policy, iterations=0,
                               stationarity_residual=residual,
                               optimality_residual=0.0, converged=True)
    tol = float(config.solver["tol"])
    report = verify_equilibrium(result, params, network, values,
                                stationarity_tol=max(tol, 1e-8))
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "passes": report.passes,
        "max_row_sum_deviation": report.max_row_sum_deviation,
        "stationarity_residual": report.stationarity_residual,
        "max_projected_gradient": report.max_projected_gradient,
        "max_fd_gradient": report.max_fd_gradient,
        "max_gradient_disagreement": report.max_gradient_disagreement,
        "tolerances": report.tolerances,
        "warnings": warnings,
    }
    outputs = [_write_json(payload, out / "validate.json")]
    manifest = build_manifest(config_path, config, "validate", inputs, outputs)
    write_manifest(manifest, out)
    print(f"validate: passes={report.passes}")
    return 0


def cmd_report(config, config_path):
    """Convert saved outputs into plot-ready tables (no recomputation)."""
    source = Path(config.paths.get("results", config.output_dir))
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    phi_path = source / "phi.csv"
    if phi_path.exists():
        totals = {}
        with open(phi_path) as handle:
            next(handle)
            for line in handle:
                _, port, value = line.strip().split(",")
                totals[port] = totals.get(port, 0.0) + float(value)
        write_table(out / "phi_bar.csv", ["port", "total_phi"],
                    sorted(totals.items()))
        outputs.append(out / "phi_bar.csv")
    calib_path = source / "calibration.json"
    if calib_path.exists():
        with open(calib_path) as handle:
            calib = json.load(handle)
        rows = [(f"r[{k}]", value) for k, value in enumerate(calib["congestion"])]
        rows += [(f"v[{k}]", value) for k, value in enumerate(calib["values"])]
        rows.append(("c", calib["transport_cost"]))
        write_table(out / "parameters_bar.csv", ["parameter", "value"], rows)
        outputs.append(out / "parameters_bar.csv")
    coeff_path = source / "coefficients.csv"
    if coeff_path.exists():
        with open(coeff_path) as handle:
            text = handle.read()
        atomic_write_text(out / "route_coefficients.csv", text)
        outputs.append(out / "route_coefficients.csv")
    if not outputs:
        raise ConfigError(f"no reportable outputs found under {source}")
    manifest = build_manifest(config_path, config, "report", [], outputs)
    write_manifest(manifest, out)
    print(f"report: wrote {len(outputs)} tables")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "check": cmd_check,
    "infer": cmd_infer,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="portflow",
        description="Stationary maritime-flow mean-field game toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="YAML run config")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return COMMANDS[args.command](config, Path(args.config))
    except INPUT_ERRORS as err:
        record = {"error": type(err).__name__, "message": str(err)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    except PortflowError as err:
        record = {"error": type(err).__name__, "message": str(err)}
        print(json.dumps(record), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

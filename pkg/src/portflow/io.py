"""File formats, run configuration, and manifests.

All outputs are delimiter-separated tables plus one JSON metadata document
per run; every file is written atomically (temp + rename) so partial outputs
never masquerade as results.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigError, LabelMismatch, NegativeQuantity, ParseError
from .flows import COLUMNS, FlowSeries

__all__ = [
    "load_flows",
    "save_flows",
    "load_distances",
    "save_matrix",
    "write_table",
    "atomic_write_text",
    "RunConfig",
    "load_config",
    "build_manifest",
    "write_manifest",
]

FLOW_HEADER = ["date", "origin", "destination", "good", "tons"]

# environment overrides are limited to paths and the seed
ENV_OVERRIDES = {
    "PORTFLOW_FLOWS_PATH": ("paths", "flows"),
    "PORTFLOW_DISTANCES_PATH": ("paths", "distances"),
    "PORTFLOW_OUTPUT_DIR": ("paths", "output"),
    "PORTFLOW_SEED": ("seed",),
}


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, float) or isinstance(cell, np.floating):
                cells.append(repr(float(cell)))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_flows(path) -> FlowSeries:
    """Parse a flow CSV with header date,origin,destination,good,tons.

    Dates are ISO-8601, tons nonnegative decimals; duplicate keys are summed.

    Raises:
        ParseError / NegativeQuantity: with the offending line number.
    """
    path = Path(path)
    records = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected a header row", line=1)
        if [h.strip() for h in header] != FLOW_HEADER:
            raise ParseError(
                f"expected header {','.join(FLOW_HEADER)!r}, got "
                f"{','.join(header)!r}", line=1)
        for line_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}",
                                 line=line_number)
            date_text, origin, destination, good, tons_text = \
                (cell.strip() for cell in row)
            try:
                date = dt.date.fromisoformat(date_text)
            except ValueError:
                raise ParseError(f"bad ISO date {date_text!r}", line=line_number)
            try:
                tons = float(tons_text)
            except ValueError:
                raise ParseError(f"bad quantity {tons_text!r}", line=line_number)
            if not np.isfinite(tons):
                raise ParseError(f"non-finite quantity {tons_text!r}",
                                 line=line_number)
            if tons < 0.0:
                raise NegativeQuantity(f"negative quantity {tons}",
                                       line=line_number)
            records.append((date, origin, destination, good, tons))
    if not records:
        return FlowSeries.empty()
    return FlowSeries.from_records(records)


def save_flows(series: FlowSeries, path) -> None:
    rows = ((row.date.date().isoformat(), row.origin, row.destination,
             row.good, row.tons)
            for row in series.frame.itertuples(index=False))
    write_table(path, FLOW_HEADER, rows)


def load_distances(path, labels):
    """Square labeled distance matrix.

    Returns (matrix, warnings). A nonzero diagonal is coerced to zero with a
    warning; asymmetry is a warning, not an error.

    Raises:
        LabelMismatch: when file labels differ from the network labels.
    """
    labels = list(labels)
    path = Path(path)
    with open(path, newline="") as handle:
        reader = list(csv.reader(handle))
    if not reader:
        raise ParseError("empty distance file", line=1)
    header = [cell.strip() for cell in reader[0][1:]]
    row_labels = [row[0].strip() for row in reader[1:] if row]
    for found in (header, row_labels):
        if sorted(found) != sorted(labels):
            missing = sorted(set(labels) - set(found))
            extra = sorted(set(found) - set(labels))
            raise LabelMismatch(missing, extra)
    index = {label: k for k, label in enumerate(labels)}
    K = len(labels)
    matrix = np.zeros((K, K))
    for line_number, row in enumerate(reader[1:], start=2):
        if not row:
            continue
        i = index[row[0].strip()]
        if len(row) != K + 1:
            raise ParseError(f"expected {K + 1} fields, got {len(row)}",
                             line=line_number)
        for col, cell in zip(header, row[1:]):
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(f"bad distance {cell!r}", line=line_number)
            matrix[i, index[col]] = value
    warnings = []
    if np.any(np.diag(matrix) != 0.0):
        warnings.append("nonzero diagonal coerced to zero")
        np.fill_diagonal(matrix, 0.0)
    if not np.allclose(matrix, matrix.T):
        warnings.append("distance matrix is not symmetric")
    return matrix, warnings


def save_matrix(matrix: np.ndarray, labels, path) -> None:
    header = ["label"] + list(labels)
    rows = ([label] + [float(x) for x in row]
            for label, row in zip(labels, np.asarray(matrix)))
    write_table(path, header, rows)


@dataclass(frozen=True)
class RunConfig:
    """One structured document binding paths, model, solver, and inference."""

    paths: dict = dc_field(default_factory=dict)
    model: dict = dc_field(default_factory=dict)
    solver: dict = dc_field(default_factory=dict)
    inference: dict = dc_field(default_factory=dict)
    synthetic: dict = dc_field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        solver = {"damping": 0.5, "tol": 1e-10, "max_iter": 10000,
                  **self.solver}
        object.__setattr__(self, "solver", solver)
        for key in ("damping", "tol"):
            if solver[key] <= 0:
                raise ConfigError(f"solver.{key} must be > 0")
        inference = dict(self.inference)
        start, end = inference.get("date_start"), inference.get("date_end")
        if start and end and str(start) > str(end):
            raise ConfigError("inference date window is not well ordered")

    def path(self, key: str, required: bool = False) -> Path | None:
        value = self.paths.get(key)
        if value is None:
            if required:
                raise ConfigError(f"paths.{key} is required")
            return None
        path = Path(value)
        if key != "output" and not path.exists():
            raise ConfigError(f"paths.{key} does not exist: {path}")
        return path

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.get("output", "portflow-output"))


def load_config(path) -> RunConfig:
    """Load the YAML run configuration, applying environment overrides
    (paths and seed only)."""
    path = Path(path)
    try:
        with open(path) as handle:
            raw = yaml.safe_load(handle) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"bad YAML in {path}: {err}")
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    for env_key, target in ENV_OVERRIDES.items():
        value = os.environ.get(env_key)
        if value is None:
            continue
        if target == ("seed",):
            raw["seed"] = int(value)
        else:
            raw.setdefault("paths", {})[target[1]] = value
    known = {"paths", "model", "solver", "inference", "synthetic", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return RunConfig(**{k: raw[k] for k in raw})


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(config_path, config: RunConfig, command: str,
                   inputs: list, outputs: list) -> dict:
    from . import __version__

    return {
        "command": command,
        "seed": config.seed,
        "config": {"path": str(config_path), "sha256": _digest(config_path)},
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "versions": {
            "portflow": __version__,
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "python": ".".join(map(str, __import__("sys").version_info[:3])),
        },
    }


def write_manifest(manifest: dict, output_dir) -> Path:
    path = Path(output_dir) / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path

"""CSV/JSON serialization shared by the modules and the command line.

Floats are written with 17 significant digits so that re-running a scenario
reproduces result files byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import SpaceGrid, TemporalEnvelope, TimeGrid
from .memory import SpinWave

FLOAT_FMT = "%.17g"


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % float(value)
    return str(value)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(FLOAT_FMT % float(obj))
    if isinstance(obj, complex):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    return obj


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt=FLOAT_FMT)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_envelope(path: str | Path, env: TemporalEnvelope, meta: dict | None = None) -> None:
    """CSV (t_seconds, re, im) plus a JSON sidecar with the grid."""
    path = Path(path)
    rows = zip(env.times, env.amplitude.real, env.amplitude.imag)
    write_table(path, ("t_seconds", "re", "im"), rows)
    g = env.grid
    write_json(_sidecar(path), {"t_start": g.t_start, "dt": g.dt, "n_samples": g.n_samples, **(meta or {})})


def read_envelope(path: str | Path) -> TemporalEnvelope:
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = TimeGrid(meta["t_start"], meta["dt"], meta["n_samples"])
    return TemporalEnvelope(grid, data[:, 1] + 1j * data[:, 2])


def write_spinwave(path: str | Path, sw: SpinWave, meta: dict | None = None) -> None:
    """CSV (z, re, im) plus a JSON sidecar with the space grid."""
    path = Path(path)
    rows = zip(sw.grid.z, sw.amplitude.real, sw.amplitude.imag)
    write_table(path, ("z", "re", "im"), rows)
    write_json(_sidecar(path), {"length_L": sw.grid.length_L, "n_samples": sw.grid.n_samples, **(meta or {})})


def read_spinwave(path: str | Path) -> SpinWave:
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return SpinWave(SpaceGrid(meta["length_L"], meta["n_samples"]), data[:, 1] + 1j * data[:, 2])

"""CSV and JSON output formats shared by the drivers and experiments.

Snapshots are written row-major over the grid as ``x,y,re,im`` with 17
significant digits, so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import csv
import json
from typing import Sequence

import numpy as np

from .errors import DimensionError
from .fem import Grid

TABLE_SCHEMA = "nlschwarz.table.v1"


def write_snapshot(path, grid: Grid, field: np.ndarray) -> None:
    field = np.asarray(field, dtype=np.complex128)
    if field.shape != (grid.n_nodes,):
        raise DimensionError(
            f"field has shape {field.shape}, expected ({grid.n_nodes},)"
        )
    x, y = grid.coordinates()
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("x,y,re,im\n")
        for xi, yi, v in zip(x, y, field):
            fh.write(f"{xi:.17g},{yi:.17g},{v.real:.17g},{v.imag:.17g}\n")


def read_snapshot(path):
    """Read a snapshot written by :func:`write_snapshot`.

    Returns ``(x, y, values)`` flat arrays in file order.
    """
    xs, ys, values = [], [], []
    with open(path, encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["x", "y", "re", "im"]:
            raise DimensionError(f"unexpected snapshot header {header!r}")
        for row in reader:
            xs.append(float(row[0]))
            ys.append(float(row[1]))
            values.append(complex(float(row[2]), float(row[3])))
    return np.array(xs), np.array(ys), np.array(values, dtype=np.complex128)


def write_density_snapshot(path, grid: Grid, density: np.ndarray) -> None:
    density = np.asarray(density, dtype=float)
    if density.shape != (grid.n_nodes,):
        raise DimensionError(
            f"density has shape {density.shape}, expected ({grid.n_nodes},)"
        )
    x, y = grid.coordinates()
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("x,y,density\n")
        for xi, yi, d in zip(x, y, density):
            fh.write(f"{xi:.17g},{yi:.17g},{d:.17g}\n")


def write_history(path, histories: Sequence[Sequence[float]]) -> None:
    """Per-iteration interface update norms, one row per iteration."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("time_step,iteration,update_norm\n")
        for step_index, history in enumerate(histories, start=1):
            for iteration, norm in enumerate(history, start=1):
                fh.write(f"{step_index},{iteration},{norm:.17g}\n")


def write_table(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """Experiment table with a schema version line ahead of the header."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(f"# schema: {TABLE_SCHEMA}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(c) for c in row) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_meta(path, payload: dict) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

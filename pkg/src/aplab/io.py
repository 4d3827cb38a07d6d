"""Serialization of fields, reports and tables.

Report payloads are written with sorted keys and ``repr``-exact floats so
that identical runs produce identical bytes.  Fields are CSV files whose
first line is a ``#`` comment carrying a JSON header (dim, resolution, name).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .grid import GridDomain, ScalarField, build_ball_grid

__all__ = ["to_jsonable", "dump_json", "write_field_csv", "read_field_csv", "write_table_csv"]


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dump_json(obj, path: Path | str) -> None:
    text = json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_field_csv(field: ScalarField, path: Path | str, interior_only: bool = True) -> None:
    dom = field.domain
    mask = dom.interior_mask if interior_only else np.ones(dom.shape, bool)
    header = {"dim": dom.dim, "resolution": dom.resolution, "name": field.name,
              "interior_only": interior_only}
    pts = dom.coords[mask]
    vals = field.values[mask]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(dom.dim)] + ["value"])
        for p, v in zip(pts, vals):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])


def read_field_csv(path: Path | str) -> ScalarField:
    """Inverse of write_field_csv; cells absent from the file are set to zero."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise DataError(f"{path}: missing JSON header line")
        header = json.loads(first[1:])
        dom: GridDomain = build_ball_grid(int(header["dim"]), int(header["resolution"]))
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "value":
        raise DataError(f"{path}: missing column header")
    data = np.array(rows[1:], dtype=float).reshape(-1, dom.dim + 1)
    idx = np.rint((data[:, :dom.dim] + 1.0) / dom.h - 0.5).astype(int)
    if np.any(idx < 0) or np.any(idx >= dom.resolution):
        raise DataError(f"{path}: coordinates outside the grid")
    values = np.zeros(dom.shape)
    values[tuple(idx.T)] = data[:, -1]
    return ScalarField(dom, values, name=header.get("name", ""))


def write_table_csv(path: Path | str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

"""Output writers: legacy ASCII VTK, CSV diagnostics and the per-step log.

Numbers are printed with ``%.17g`` so every double survives a reload and
identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
from typing import Iterable, Mapping

import numpy as np

from .grid import Grid, check_field


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_vtk(fields: Mapping[str, np.ndarray], grid: Grid, path, title: str = "tumorpf output") -> None:
    """STRUCTURED_POINTS with point data at cell centres, one SCALARS block
    per field in mapping order.  x varies fastest."""
    if not fields:
        raise ValueError("write_vtk needs at least one field")
    n = list(grid.cells) + [1] * (3 - grid.dims)
    h = list(grid.spacing) + [1.0] * (3 - grid.dims)
    origin = [0.5 * s for s in grid.spacing] + [0.0] * (3 - grid.dims)
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(k) for k in n),
        "ORIGIN " + " ".join(_fmt(v) for v in origin),
        "SPACING " + " ".join(_fmt(v) for v in h),
        f"POINT_DATA {grid.size}",
    ]
    for name, arr in fields.items():
        if any(c.isspace() for c in name) or not name:
            raise ValueError(f"field name {name!r} must be non-empty without whitespace")
        arr = check_field(arr, grid, name)
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in arr.ravel(order="F"))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_csv(rows: Iterable[Mapping], path, delimiter: str = ",") -> None:
    rows = list(rows)
    if not rows:
        raise ValueError("no diagnostics rows to write")
    columns = list(rows[0])
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_csv(path, delimiter: str = ",") -> list[dict]:
    with open(path, encoding="ascii", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        out = []
        for r in reader:
            out.append({k: (int(v) if v.lstrip("-").isdigit() else float(v)) for k, v in r.items()})
    return out


class DiagnosticsLog:
    """Tab-separated log, one line per step, header fixed by the first row."""

    def __init__(self, path):
        self._fh = open(path, "w", encoding="ascii", newline="\n")
        self.columns: list[str] | None = None

    def write(self, row: Mapping) -> None:
        if self.columns is None:
            self.columns = list(row)
            self._fh.write("\t".join(self.columns) + "\n")
        self._fh.write("\t".join(_fmt(row[c]) for c in self.columns) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

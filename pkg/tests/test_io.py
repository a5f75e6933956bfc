from __future__ import annotations

import math
import os

import numpy as np
import pytest

from tumorpf.grid import Grid, GridError
from tumorpf.io import DiagnosticsLog, read_csv, write_csv, write_vtk

G4 = Grid((1.0, 1.0), (4, 4))

GOLDEN = (
    "# vtk DataFile Version 3.0\n"
    "tumorpf output\n"
    "ASCII\n"
    "DATASET STRUCTURED_POINTS\n"
    "DIMENSIONS 4 4 1\n"
    "ORIGIN 0.125 0.125 0\n"
    "SPACING 0.25 0.25 1\n"
    "POINT_DATA 16\n"
    "SCALARS phi double 1\n"
    "LOOKUP_TABLE default\n" + "0.5\n" * 16
)


def test_vtk_golden_bytes(tmp_path):
    p = tmp_path / "a.vtk"
    write_vtk({"phi": np.full(G4.shape, 0.5)}, G4, p)
    assert p.read_bytes() == GOLDEN.encode("ascii")


def test_vtk_blocks_in_order_and_x_fastest(tmp_path):
    p = tmp_path / "b.vtk"
    a = np.arange(16.0).reshape(4, 4)
    write_vtk({"zeta": a, "alpha": -a}, G4, p)
    lines = p.read_text().splitlines()
    heads = [l for l in lines if l.startswith("SCALARS")]
    assert heads == ["SCALARS zeta double 1", "SCALARS alpha double 1"]
    first = lines[lines.index("SCALARS zeta double 1") + 2:][:4]
    # x (axis 0) varies fastest
    assert [float(v) for v in first] == [a[0, 0], a[1, 0], a[2, 0], a[3, 0]]


def test_vtk_rejects_bad_input(tmp_path):
    with pytest.raises(GridError):
        write_vtk({"phi": np.zeros((3, 4))}, G4, tmp_path / "c.vtk")
    with pytest.raises(ValueError):
        write_vtk({"two words": np.zeros(G4.shape)}, G4, tmp_path / "c.vtk")
    with pytest.raises(ValueError):
        write_vtk({}, G4, tmp_path / "c.vtk")


def test_csv_round_trip_full_precision(tmp_path):
    rng = np.random.default_rng(0)
    rows = [{"step": k, "t": k * 0.1, "energy": float(rng.standard_normal()) * 1e-7, "mass": math.pi * k} for k in range(20)]
    p = tmp_path / "d.csv"
    write_csv(rows, p)
    back = read_csv(p)
    assert back == rows
    assert p.read_text().splitlines()[0] == "step,t,energy,mass"


def test_outputs_byte_stable(tmp_path):
    rows = [{"step": 1, "t": 0.1 + 0.2}]
    field = {"phi": np.random.default_rng(1).random(G4.shape)}
    for name in ("x", "y"):
        write_csv(rows, tmp_path / f"{name}.csv")
        write_vtk(field, G4, tmp_path / f"{name}.vtk")
    assert (tmp_path / "x.csv").read_bytes() == (tmp_path / "y.csv").read_bytes()
    assert (tmp_path / "x.vtk").read_bytes() == (tmp_path / "y.vtk").read_bytes()


def test_unwritable_path_raises(tmp_path):
    missing = os.path.join(tmp_path, "no", "such", "dir", "f.csv")
    with pytest.raises(OSError):
        write_csv([{"a": 1}], missing)
    with pytest.raises(OSError):
        write_vtk({"phi": np.zeros(G4.shape)}, G4, missing)


def test_empty_csv_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_csv([], tmp_path / "e.csv")


def test_diagnostics_log(tmp_path):
    p = tmp_path / "d.log"
    with DiagnosticsLog(p) as log:
        log.write({"step": 0, "t": 0.0, "energy": 1.5})
        log.write({"step": 1, "t": 0.01, "energy": 1.25})
    lines = p.read_text().splitlines()
    assert lines == ["step\tt\tenergy", "0\t0\t1.5", "1\t0.01\t1.25"]

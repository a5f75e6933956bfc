from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from tumorpf import __version__, presets
from tumorpf.cli import EXIT_INVALID, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, OUTPUT_ENV, main
from tumorpf.io import read_csv
from tumorpf.scenario import SCHEMA

SMALL = f"""schema: {SCHEMA}
name: small
grid: {{cells: [16, 16]}}
params: {{eps: {{phi: 0.05}}}}
schedule: {{t_end: 0.05, dt: 0.01}}
outputs: {{every: 2, formats: [csv, log, vtk]}}
seed: 3
"""


@pytest.mark.parametrize("name", presets.NAMES)
def test_validate_every_preset(name, capsys):
    assert main(["validate", name]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_version(capsys):
    assert main(["version"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == __version__


def test_presets_list(capsys):
    assert main(["presets"]) == EXIT_OK
    assert capsys.readouterr().out.split() == list(presets.NAMES)


def test_haptotaxis_preset_lists_strengths(capsys):
    assert main(["presets", "nonlocal-haptotaxis-sweep"]) == EXIT_OK
    text = capsys.readouterr().out
    for v in ("0.0005", "0.001", "0.002", "0.00275", "0.00525"):
        assert v in text


def test_unknown_preset_is_usage_error():
    assert main(["presets", "nope"]) == EXIT_USAGE


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["run", "missing-file.yaml"], ["validate", "x", "--bogus"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_invalid_scenario_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(SMALL + "model: {model: four-species, vessels: true}\nbogus: 1\n")
    assert main(["validate", str(p)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "vessels require flow = darcy" in err and "bogus: unknown key" in err


def test_invalid_override_exit_2():
    assert main(["validate", "prototype-spinodal", "--set", "schedule.dt=-1"]) == EXIT_INVALID


def test_solver_failure_exit_3(tmp_path, capsys):
    argv = ["run", "vessel-coupling", "--out", str(tmp_path), "--set", "grid.cells=[16, 16]", "--set", "schedule.dt=5.0", "--set", "schedule.t_end=5.0"]
    assert main(argv) == EXIT_SOLVER
    assert "CFL" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(SMALL)
    out = tmp_path / "out"
    assert main(["run", str(p), "--out", str(out)]) == EXIT_OK
    names = sorted(os.listdir(out))
    assert names == ["diagnostics.csv", "diagnostics.log", "fields_00000.vtk", "fields_00001.vtk", "fields_00002.vtk", "fields_00003.vtk", "scenario.yaml"]
    rows = read_csv(out / "diagnostics.csv")
    assert [r["step"] for r in rows] == [0, 2, 4, 5]
    log = (out / "diagnostics.log").read_text().splitlines()
    assert len(log) == 7 and log[0].startswith("step\tt\tenergy")


def test_output_dir_from_environment(tmp_path, monkeypatch):
    p = tmp_path / "s.yaml"
    p.write_text(SMALL)
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["run", str(p)]) == EXIT_OK
    assert (tmp_path / "env" / "diagnostics.csv").exists()
    # --out wins over the environment
    assert main(["run", str(p), "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "flag" / "diagnostics.csv").exists()


def test_output_dir_from_scenario(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    p = tmp_path / "s.yaml"
    p.write_text(SMALL.replace("outputs: {", "outputs: {dir: results, "))
    assert main(["run", str(p)]) == EXIT_OK
    assert (tmp_path / "results" / "diagnostics.csv").exists()


def test_csv_byte_identical_across_runs(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(SMALL)
    for d in ("a", "b"):
        assert main(["run", str(p), "--out", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()


def test_sweep_writes_one_directory_per_variant(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(SMALL + "sweep:\n  - {name: thin, set: {params.eps: {phi: 0.03}}}\n  - {name: thick, set: {params.eps: {phi: 0.06}}}\n")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert sorted(os.listdir(tmp_path / "o")) == ["thick", "thin"]


def test_spinodal_preset_energy_monotone(tmp_path):
    # 100 steps on the preset's 64^2 grid
    assert main(["run", "prototype-spinodal", "--out", str(tmp_path), "--set", "schedule.t_end=0.5", "--set", "outputs.formats=[log]"]) == EXIT_OK
    lines = (tmp_path / "diagnostics.log").read_text().splitlines()
    cols = lines[0].split("\t")
    E = np.array([float(l.split("\t")[cols.index("energy")]) for l in lines[1:]])
    assert len(E) == 101
    assert np.all(E[1:] <= E[:-1] + 1e-12 * np.abs(E[:-1]))


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "tumorpf", "version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == __version__

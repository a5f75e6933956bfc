"""Scenario files: a versioned YAML document merged into documented defaults.

Top-level sections: ``schema``, ``name``, ``grid``, ``model``, ``params``,
``initial``, ``schedule``, ``outputs``, ``seed``, ``network``, ``events`` and
``sweep``.  Parsing collects every problem with its dotted location before
failing, so one run of ``validate`` reports them all.
"""

from __future__ import annotations

import copy
import os
from dataclasses import fields as dc_fields
from typing import Any

import numpy as np
import yaml

from . import engine, noise, sources, timefrac, vessel
from .elliptic import ElasticParams, FlowParams
from .grid import Grid
from .potentials import AdhesionSpec, PotentialSpec

SCHEMA = "tumorpf-scenario/1"

_RATES = {f.name: f.default for f in dc_fields(sources.RateParams)}

DEFAULTS: dict[str, Any] = {
    "schema": SCHEMA,
    "name": "scenario",
    "grid": {"extents": [1.0, 1.0], "cells": [64, 64]},
    "model": {
        "model": "prototype-CH",
        "flow": "off",
        "adhesion": "off",
        "time_kind": "integer",
        "noise": False,
        "elasticity": False,
        "chemo": False,
        "vessels": False,
    },
    "params": {
        "mobility": {},
        "mobility_form": "degenerate",
        "eps": {},
        "D": {},
        "potential": {"form": "single", "prefactors": [1.0], "theta": 1.25},
        "adhesion": {"chi_c": 0.0, "chi_h": 0.0},
        "rates": dict(_RATES),
        "switch": {"mode": "heaviside", "steepness": 50.0},
        "flow": {"K": 1.0, "korteweg": "mu-grad-phi"},
        "elastic": {"G": 1.0, "nu": 0.3, "lambda_c": 1.0},
        "cell_kernel": {"strength": 1.0, "width": 0.05},
        "haptotaxis": {"eps": 0.00525, "omega_scale": 0.75},
        "fractional": {"alpha": 1.0, "scheme": "L1", "history_cap": None},
        "noise": {"omega": 0.0, "phi_cut": 0.05, "trunc": 8},
        "vessel": {
            "L_p": 1.0,
            "L_sigma": 1.0,
            "r_sigma": 0.0,
            "D_v": 1.0,
            "ends": "closed",
            "gs_tol": 1e-8,
            "gs_max_sweeps": 100,
            "initial_concentration": 0.0,
        },
        "solver": {"newton_tol": 1e-12},
    },
    "initial": {},
    "schedule": {"t_end": 1.0, "dt": 0.01},
    "outputs": {"every": 10, "fields": [], "formats": ["csv", "log"], "dir": "output"},
    "seed": 0,
    "network": None,
    "events": [],
    "sweep": [],
}

# Keys whose values are free-form mappings (species names, shape specs).
_OPEN = {"params.mobility", "params.eps", "params.D", "initial"}

SHAPES = {
    "constant": {"value"},
    "random": {"low", "high"},
    "ellipse": {"center", "radii", "width", "inside", "outside"},
    "linear": {"axis", "low", "high"},
}

MODEL_DEFAULT_INITIAL = {
    "prototype-CH": {"phi": {"shape": "random", "low": 0.4, "high": 0.6}},
    "four-species": {
        "T": {"shape": "ellipse", "center": [0.5, 0.5], "radii": [0.15, 0.12], "width": 0.02, "inside": 1.0, "outside": 0.0},
        "sigma": {"shape": "constant", "value": 1.0},
        "CMT": {"shape": "constant", "value": 0.0},
    },
    "stratified-ECM": {
        "P": {"shape": "ellipse", "center": [0.5, 0.5], "radii": [0.15, 0.12], "width": 0.02, "inside": 0.9, "outside": 0.0},
        "H": {"shape": "constant", "value": 0.0},
        "N": {"shape": "constant", "value": 0.0},
        "sigma": {"shape": "constant", "value": 1.0},
        "ECM": {"shape": "constant", "value": 0.5},
        "MDE": {"shape": "constant", "value": 0.0},
        "TAF": {"shape": "constant", "value": 0.0},
    },
}


class ScenarioError(ValueError):
    """Carries every validation problem found."""

    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


def _type_ok(default, value) -> bool:
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, (int, float)):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    if isinstance(default, dict):
        return isinstance(value, dict)
    return True


def _merge(default: Any, value: Any, path: str, errors: list[str]) -> Any:
    if path in _OPEN:
        if not isinstance(value, dict):
            errors.append(f"{path}: expected a mapping, got {type(value).__name__}")
            return copy.deepcopy(default)
        return copy.deepcopy(value)
    if isinstance(default, dict) and path not in ("network",):
        if not isinstance(value, dict):
            errors.append(f"{path}: expected a mapping, got {type(value).__name__}")
            return copy.deepcopy(default)
        out = copy.deepcopy(default)
        for k, v in value.items():
            sub = f"{path}.{k}" if path else str(k)
            if k not in default:
                errors.append(f"{sub}: unknown key")
                continue
            out[k] = _merge(default[k], v, sub, errors)
        return out
    if not _type_ok(default, value):
        errors.append(f"{path}: expected {type(default).__name__}, got {type(value).__name__} ({value!r})")
        return copy.deepcopy(default)
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    return copy.deepcopy(value)


class Scenario:
    """Validated scenario; ``data`` is the fully merged document."""

    def __init__(self, data: dict, base_dir: str = "."):
        self.data = data
        self.base_dir = base_dir

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.data == other.data

    def __repr__(self):
        return f"Scenario({self.data['name']!r})"

    # -- typed views ---------------------------------------------------------

    @property
    def name(self) -> str:
        return self.data["name"]

    def grid(self) -> Grid:
        g = self.data["grid"]
        return Grid(tuple(float(x) for x in g["extents"]), tuple(int(n) for n in g["cells"]))

    def config(self) -> engine.ModelConfig:
        return engine.ModelConfig(**self.data["model"])

    def params(self) -> engine.Params:
        p = self.data["params"]
        v = p["vessel"]
        return engine.Params(
            mobility=dict(p["mobility"]),
            mobility_form=p["mobility_form"],
            eps=dict(p["eps"]),
            D=dict(p["D"]),
            potential=PotentialSpec(p["potential"]["form"], tuple(p["potential"]["prefactors"]), p["potential"]["theta"]),
            adhesion=AdhesionSpec(**p["adhesion"]),
            rates=sources.RateParams(**p["rates"]),
            switch=sources.SwitchSpec(**p["switch"]),
            flow=FlowParams(**p["flow"]),
            elastic=ElasticParams(**p["elastic"]),
            cell_kernel_strength=p["cell_kernel"]["strength"],
            cell_kernel_width=p["cell_kernel"]["width"],
            haptotaxis_eps=p["haptotaxis"]["eps"],
            omega_scale=p["haptotaxis"]["omega_scale"],
            fractional=timefrac.FractionalSpec(**p["fractional"]),
            noise=noise.NoiseSpec(p["noise"]["omega"], p["noise"]["phi_cut"], p["noise"]["trunc"], self.data["seed"]),
            wall=vessel.WallParams(v["L_p"], v["L_sigma"], v["r_sigma"]),
            D_v=v["D_v"],
            vessel_ends=v["ends"],
            gs_tol=v["gs_tol"],
            gs_max_sweeps=v["gs_max_sweeps"],
            newton_tol=p["solver"]["newton_tol"],
        )

    def network(self) -> vessel.VesselNetwork | None:
        net = self.data["network"]
        if net is None:
            return None
        if "inline" in net:
            return vessel.parse_network(net["inline"])
        path = net["file"]
        if not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        return vessel.load_network(path)

    def initial_fields(self, grid: Grid) -> dict:
        rng = np.random.default_rng(self.data["seed"])
        out = {}
        for name, spec in self.data["initial"].items():
            out[name] = build_shape(spec, grid, rng)
        return out

    def build(self):
        """Assemble ``(model, state)`` ready to run."""
        grid = self.grid()
        cfg = self.config()
        model = engine.assemble(cfg, self.params(), grid, self.network())
        phi_v = None
        if cfg.vessels:
            mesh, _ = model.vessel_mesh()
            phi_v = np.full(mesh.n_nodes, float(self.data["params"]["vessel"]["initial_concentration"]))
        state = engine.initial_state(model, self.initial_fields(grid), 0.0, phi_v)
        return model, state

    def variants(self) -> list[tuple[str, "Scenario"]]:
        """One scenario per sweep entry (or just this one without a sweep)."""
        if not self.data["sweep"]:
            return [(self.name, self)]
        out = []
        for entry in self.data["sweep"]:
            d = copy.deepcopy(self.data)
            d["sweep"] = []
            errs: list[str] = []
            for key, value in entry["set"].items():
                set_path(d, key, value, errs)
            if errs:
                raise ScenarioError(errs)
            d["name"] = f"{self.name}/{entry['name']}"
            out.append((entry["name"], parse_data(d, self.base_dir)))
        return out


def build_shape(spec: dict, grid: Grid, rng: np.random.Generator) -> np.ndarray:
    shape = spec["shape"]
    if shape == "constant":
        return grid.full(float(spec["value"]))
    if shape == "random":
        return rng.uniform(float(spec["low"]), float(spec["high"]), size=grid.shape)
    X = grid.centers()
    if shape == "linear":
        a = int(spec["axis"])
        return spec["low"] + (spec["high"] - spec["low"]) * X[a] / grid.extents[a]
    c = spec["center"]
    r = spec["radii"]
    q = np.sqrt(sum(((X[a] - c[a]) / r[a]) ** 2 for a in range(grid.dims)))
    d = (q - 1.0) * min(r[: grid.dims])
    return spec["outside"] + (spec["inside"] - spec["outside"]) * 0.5 * (1.0 - np.tanh(d / spec["width"]))


def set_path(data: dict, dotted: str, value: Any, errors: list[str]) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            errors.append(f"{dotted}: unknown key")
            return
        node = node[k]
    if not isinstance(node, dict):
        errors.append(f"{dotted}: unknown key")
        return
    node[keys[-1]] = value


def _check_semantics(d: dict, base_dir: str, errors: list[str]) -> None:
    if d["schema"] != SCHEMA:
        errors.append(f"schema: expected {SCHEMA!r}, got {d['schema']!r}")
    g = d["grid"]
    try:
        Grid(tuple(float(x) for x in g["extents"]), tuple(int(n) for n in g["cells"]))
    except (ValueError, TypeError) as e:
        errors.append(f"grid: {e}")
    cfg = None
    try:
        cfg = engine.ModelConfig(**d["model"])
        errors.extend(f"model: {p}" for p in cfg.problems())
    except TypeError as e:
        errors.append(f"model: {e}")
    sc = Scenario(d, base_dir)
    try:
        sc.params()
    except (ValueError, TypeError) as e:
        errors.append(f"params: {e}")
    sched = d["schedule"]
    try:
        engine.n_steps(sched["t_end"], sched["dt"])
    except (ValueError, TypeError) as e:
        errors.append(f"schedule: {e}")
    out = d["outputs"]
    if not isinstance(out["every"], int) or out["every"] < 1:
        errors.append("outputs.every: must be an integer >= 1")
    for fmt in out["formats"]:
        if fmt not in ("csv", "vtk", "log"):
            errors.append(f"outputs.formats: unknown format {fmt!r}")
    if not isinstance(d["seed"], int) or isinstance(d["seed"], bool) or not 0 <= d["seed"] < 2**64:
        errors.append("seed: must be an integer in [0, 2**64)")
    if cfg is not None and not cfg.problems():
        species = engine.Model(cfg, engine.Params(), None, engine.species_roles(cfg)).species
        for k in d["initial"]:
            if k not in species:
                errors.append(f"initial.{k}: field not in model {cfg.model}")
        for k in species:
            spec = d["initial"].get(k)
            if spec is None:
                continue
            if not isinstance(spec, dict) or spec.get("shape") not in SHAPES:
                errors.append(f"initial.{k}: shape must be one of {sorted(SHAPES)}")
                continue
            missing = SHAPES[spec["shape"]] - set(spec)
            extra = set(spec) - SHAPES[spec["shape"]] - {"shape"}
            if missing:
                errors.append(f"initial.{k}: missing {sorted(missing)}")
            if extra:
                errors.append(f"initial.{k}: unknown key(s) {sorted(extra)}")
        for table in ("mobility", "eps", "D"):
            for k in d["params"][table]:
                if k not in species:
                    errors.append(f"params.{table}.{k}: field not in model {cfg.model}")
        for k in out["fields"]:
            if k not in species:
                errors.append(f"outputs.fields: {k!r} not in model {cfg.model}")
        if cfg.vessels and d["network"] is None:
            errors.append("network: vessels are on but no network is given")
    net = d["network"]
    if net is not None:
        if not isinstance(net, dict) or len(net) != 1 or not ({"file", "inline"} & set(net)):
            errors.append("network: expected {file: path} or {inline: text}")
        else:
            try:
                sc.network()
            except (OSError, ValueError) as e:
                errors.append(f"network: {e}")
    for i, ev in enumerate(d["events"]):
        if not isinstance(ev, dict) or set(ev) - {"t", "add_segment", "nodes"} or "t" not in ev or "add_segment" not in ev:
            errors.append(f"events[{i}]: expected keys t, add_segment and optional nodes")
            continue
        seg = ev["add_segment"]
        if not isinstance(seg, dict) or set(seg) != {"id", "a", "b", "radius", "K_v", "cells"}:
            errors.append(f"events[{i}].add_segment: needs id, a, b, radius, K_v, cells")
    for i, entry in enumerate(d["sweep"]):
        if not isinstance(entry, dict) or set(entry) != {"name", "set"} or not isinstance(entry.get("set"), dict):
            errors.append(f"sweep[{i}]: expected keys name and set")


def parse_data(raw: Any, base_dir: str = ".") -> Scenario:
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ScenarioError(["<root>: expected a mapping"])
    merged = _merge(DEFAULTS, raw, "", errors)
    model = merged["model"].get("model")
    if model in MODEL_DEFAULT_INITIAL:
        init = copy.deepcopy(MODEL_DEFAULT_INITIAL[model])
        if not (merged["model"].get("chemo")):
            init.pop("CMT", None)
        init.update(merged["initial"])
        merged["initial"] = init
    # bad entries were replaced by defaults, so semantic checks still apply
    _check_semantics(merged, base_dir, errors)
    if errors:
        raise ScenarioError(errors)
    return Scenario(merged, base_dir)


def parse_scenario(text: str, base_dir: str = ".") -> Scenario:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError([f"<yaml>: {e}"]) from None
    return parse_data(raw if raw is not None else {}, base_dir)


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_scenario(text, os.path.dirname(os.path.abspath(path)))


def serialize(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.data, sort_keys=False, default_flow_style=None)


def apply_overrides(scenario: Scenario, overrides: list[str]) -> Scenario:
    """Apply ``key=value`` strings (value parsed as YAML) and revalidate."""
    d = copy.deepcopy(scenario.data)
    errors: list[str] = []
    for item in overrides:
        if "=" not in item:
            errors.append(f"--set {item!r}: expected key=value")
            continue
        key, text = item.split("=", 1)
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError:
            value = text
        set_path(d, key.strip(), value, errors)
    if errors:
        raise ScenarioError(errors)
    return parse_data(d, scenario.base_dir)

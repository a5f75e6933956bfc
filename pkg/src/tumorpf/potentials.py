"""Landau double-well potentials, convex-concave splitting, adhesion energy,
chemical potentials and the discrete Ginzburg-Landau energy.

The Landau well is ``C * 1/4 phi^2 (1 - phi)^2``; its convex part is
``C * (phi^4/4 + theta/2 phi^2)`` and the remainder is concave on
``[-0.25, 1.25]`` for ``theta >= 1.25``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .grid import NEUMANN, Grid, face_difference, laplacian

Array = np.ndarray

ADMISSIBLE_RANGE = (-0.25, 1.25)


@dataclass(frozen=True)
class LandauWell:
    """Scaled Landau well with an Eyre-type split."""

    scale: float = 1.0
    theta: float = 1.25

    def __call__(self, x):
        return self.scale * 0.25 * x**2 * (1.0 - x) ** 2

    def d1(self, x):
        return self.scale * 0.5 * x * (1.0 - x) * (1.0 - 2.0 * x)

    def d2(self, x):
        return self.scale * (0.5 - 3.0 * x + 3.0 * x**2)

    def convex(self, x):
        return self.scale * (0.25 * x**4 + 0.5 * self.theta * x**2)

    def convex_d1(self, x):
        return self.scale * (x**3 + self.theta * x)

    def convex_d2(self, x):
        return self.scale * (3.0 * x**2 + self.theta)

    def expansive(self, x):
        return self(x) - self.convex(x)

    def expansive_d1(self, x):
        return self.scale * (-1.5 * x**2 + (0.5 - self.theta) * x)

    def expansive_d2(self, x):
        return self.scale * (-3.0 * x + 0.5 - self.theta)


@dataclass(frozen=True)
class SplitPart:
    value: object
    d1: object
    d2: object


def psi_split(spec: "PotentialSpec", species: int = 0) -> tuple[SplitPart, SplitPart]:
    """Return ``(Psi_c, Psi_e)`` for the well acting on ``species``."""
    w = spec.well(species)
    return SplitPart(w.convex, w.convex_d1, w.convex_d2), SplitPart(w.expansive, w.expansive_d1, w.expansive_d2)


@dataclass(frozen=True)
class PotentialSpec:
    """``form`` is ``"single"`` (well of the sum of CH species) or
    ``"per-species"`` (sum of wells); ``prefactors`` holds C_Psi or one
    C_Psi_alpha per species."""

    form: str = "single"
    prefactors: tuple[float, ...] = (1.0,)
    theta: float = 1.25

    def __post_init__(self):
        if self.form not in ("single", "per-species"):
            raise ValueError(f"unknown potential form {self.form!r}")
        pf = tuple(float(c) for c in np.atleast_1d(self.prefactors))
        if not pf or any(not np.isfinite(c) or c <= 0 for c in pf):
            raise ValueError(f"potential prefactors must be positive, got {pf}")
        object.__setattr__(self, "prefactors", pf)

    def well(self, species: int = 0) -> LandauWell:
        if self.form == "single":
            return LandauWell(self.prefactors[0], self.theta)
        c = self.prefactors[species] if species < len(self.prefactors) else self.prefactors[-1]
        return LandauWell(c, self.theta)


def psi(phi_ch: Sequence[Array] | Array, spec: PotentialSpec):
    """Landau energy density of the CH species."""
    phis = _as_list(phi_ch)
    if spec.form == "single":
        return spec.well()(sum(phis))
    return sum(spec.well(k)(p) for k, p in enumerate(phis))


def psi_derivatives(phi_ch: Sequence[Array] | Array, spec: PotentialSpec) -> list:
    """``d Psi / d phi_alpha`` for every CH species."""
    phis = _as_list(phi_ch)
    if spec.form == "single":
        d = spec.well().d1(sum(phis))
        return [d for _ in phis]
    return [spec.well(k).d1(p) for k, p in enumerate(phis)]


def _as_list(phi_ch):
    if isinstance(phi_ch, np.ndarray) or np.isscalar(phi_ch):
        return [phi_ch]
    return list(phi_ch)


@dataclass(frozen=True)
class AdhesionSpec:
    chi_c: float = 0.0
    chi_h: float = 0.0

    def __post_init__(self):
        for name in ("chi_c", "chi_h"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class EnergyParams:
    """Interface widths for CH species and ``D_beta`` for RD species."""

    eps: Mapping[str, float] = field(default_factory=dict)
    D: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in {**self.eps, **self.D}.items():
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"energy coefficient for {k!r} must be positive, got {v}")


# Species roles of each model.  The order of CH species fixes the index used
# by per-species prefactors.
MODEL_SPECIES = {
    "prototype-CH": {"CH": ("phi",), "RD": (), "OD": ()},
    "four-species": {"CH": ("T",), "RD": ("sigma",), "OD": ()},
    "stratified-ECM": {"CH": ("P", "H", "N"), "RD": ("sigma", "MDE", "TAF"), "OD": ("ECM",)},
}


class MissingFieldError(KeyError):
    pass


def _need(state: Mapping[str, Array], *names: str):
    missing = [n for n in names if n not in state]
    if missing:
        raise MissingFieldError(f"state is missing required field(s): {', '.join(missing)}")
    return [state[n] for n in names]


def adhesion_derivatives(state: Mapping[str, Array], model: str, adhesion: AdhesionSpec) -> dict[str, Array]:
    """Partial derivatives of the adhesion energy Phi for each species."""
    if model == "four-species":
        T, s = _need(state, "T", "sigma")
        return {"T": -adhesion.chi_c * s, "sigma": -adhesion.chi_c * T}
    if model == "stratified-ECM":
        P, H, s, E = _need(state, "P", "H", "sigma", "ECM")
        attract = -(adhesion.chi_c * s + adhesion.chi_h * E)
        live = P + H
        return {
            "P": attract,
            "H": attract,
            "N": np.zeros_like(P),
            "sigma": -adhesion.chi_c * live,
            "ECM": -adhesion.chi_h * live,
            "MDE": np.zeros_like(P),
            "TAF": np.zeros_like(P),
        }
    return {}


def adhesion_energy(state: Mapping[str, Array], model: str, adhesion: AdhesionSpec):
    if model == "four-species":
        T, s = _need(state, "T", "sigma")
        return -adhesion.chi_c * T * s
    if model == "stratified-ECM":
        P, H, s, E = _need(state, "P", "H", "sigma", "ECM")
        return -(P + H) * (adhesion.chi_c * s + adhesion.chi_h * E)
    return 0.0


def chemical_potentials(
    state: Mapping[str, Array],
    grid: Grid,
    model: str,
    potential: PotentialSpec,
    energy: EnergyParams,
    adhesion: AdhesionSpec = AdhesionSpec(),
    lam_div_u: Array | None = None,
) -> dict[str, Array]:
    """Chemical potentials of all species of ``model``.

    CH: ``dPsi + dPhi - eps^2 lap(phi)`` (plus ``lambda div u`` for the tumor
    field when ``lam_div_u`` is given); RD: ``D phi + dPhi``; OD: ``dPhi``.
    """
    roles = MODEL_SPECIES[model]
    ch = _need(state, *roles["CH"])
    dpsi = psi_derivatives(ch, potential)
    dphi = adhesion_derivatives(state, model, adhesion)
    out: dict[str, Array] = {}
    for k, name in enumerate(roles["CH"]):
        eps = energy.eps.get(name, 0.0)
        mu = dpsi[k] + dphi.get(name, 0.0) - eps**2 * laplacian(state[name], grid, NEUMANN)
        if lam_div_u is not None and name in ("T", "phi"):
            mu = mu + lam_div_u
        out[name] = mu
    for name in roles["RD"]:
        (phi,) = _need(state, name)
        out[name] = energy.D.get(name, 0.0) * phi + dphi.get(name, 0.0)
    for name in roles["OD"]:
        _need(state, name)
        out[name] = dphi.get(name, np.zeros(grid.shape))
    return out


def gradient_energy(phi: Array, grid: Grid) -> float:
    """``1/2 int |grad phi|^2`` from face differences (zero flux through the
    boundary), the exact discrete counterpart of the 5-point Laplacian."""
    total = 0.0
    for a in range(grid.dims):
        total += np.sum(face_difference(phi, grid, a) ** 2)
    return 0.5 * total * grid.cell_volume


def total_energy(
    state: Mapping[str, Array],
    grid: Grid,
    model: str,
    potential: PotentialSpec,
    energy: EnergyParams,
    adhesion: AdhesionSpec = AdhesionSpec(),
) -> float:
    """Discrete Ginzburg-Landau energy with midpoint cell quadrature."""
    roles = MODEL_SPECIES[model]
    ch = _need(state, *roles["CH"])
    density = psi(ch, potential) + adhesion_energy(state, model, adhesion)
    for name in roles["RD"]:
        density = density + 0.5 * energy.D.get(name, 0.0) * state[name] ** 2
    E = grid.integrate(np.broadcast_to(density, grid.shape))
    for name in roles["CH"]:
        eps = energy.eps.get(name, 0.0)
        if eps:
            E += eps**2 * gradient_energy(state[name], grid)
    return float(E)

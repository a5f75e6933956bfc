"""Model assembly and the sequential semi-implicit time loop.

One step runs, in order: elasticity, Darcy flow (with Gauss-Seidel vessel
coupling), the Cahn-Hilliard species, the reaction-diffusion species, the
pointwise species, vessel transport, noise and the fractional history.
All sources and explicit couplings are evaluated at the start of the step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels, noise as noise_mod, sources, timefrac, vessel as vessel_mod
from .elliptic import (
    ElasticParams,
    FlowParams,
    LinearSolveSettings,
    SolverError,
    korteweg_faces,
    solve_darcy,
    solve_elasticity,
)
from .grid import (
    NEUMANN,
    Grid,
    GridError,
    check_field,
    dirichlet,
    dirichlet_lift,
    divergence_of_face_flux,
    face_mobility,
    laplacian,
    laplacian_matrix,
    mobility_matrix,
)
from .potentials import (
    AdhesionSpec,
    EnergyParams,
    LandauWell,
    PotentialSpec,
    adhesion_derivatives,
    total_energy,
)

Array = np.ndarray

MODELS = ("prototype-CH", "four-species", "stratified-ECM")
ADHESION_MODES = ("off", "cell-cell", "haptotaxis-local", "haptotaxis-nonlocal")
SOFT_BOUNDS = (-0.25, 1.25)
HARD_BOUNDS = (-1.0, 2.0)


class ConfigError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class BoundsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelConfig:
    model: str = "prototype-CH"
    flow: str = "off"
    adhesion: str = "off"
    time_kind: str = "integer"
    noise: bool = False
    elasticity: bool = False
    chemo: bool = False
    vessels: bool = False

    def problems(self) -> list[str]:
        """All consistency violations (empty when the toggles are valid)."""
        out = []
        if self.model not in MODELS:
            out.append(f"model must be one of {MODELS}, got {self.model!r}")
        if self.flow not in ("off", "darcy"):
            out.append(f"flow must be 'off' or 'darcy', got {self.flow!r}")
        if self.adhesion not in ADHESION_MODES:
            out.append(f"adhesion must be one of {ADHESION_MODES}, got {self.adhesion!r}")
        if self.time_kind not in ("integer", "fractional"):
            out.append(f"time_kind must be 'integer' or 'fractional', got {self.time_kind!r}")
        if self.vessels and self.flow != "darcy":
            out.append("vessels require flow = darcy")
        if self.vessels and self.model == "prototype-CH":
            out.append("vessels require a nutrient species (four-species or stratified-ECM)")
        if self.time_kind == "fractional" and self.noise:
            out.append("fractional time excludes noise")
        if self.time_kind == "fractional" and self.model == "stratified-ECM":
            out.append("fractional time is defined for prototype-CH and four-species only")
        if self.time_kind == "fractional" and self.flow != "off":
            out.append("fractional time excludes flow")
        if self.elasticity and self.model == "stratified-ECM":
            out.append("elasticity is available for prototype-CH and four-species only")
        if self.adhesion == "cell-cell" and self.model == "stratified-ECM":
            out.append("cell-cell adhesion is available for prototype-CH and four-species only")
        if self.adhesion.startswith("haptotaxis") and self.model != "stratified-ECM":
            out.append("haptotaxis needs the ECM field of the stratified-ECM model")
        if self.chemo and self.model != "four-species":
            out.append("chemotherapy is available for the four-species model only")
        return out

    def validate(self) -> None:
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))


@dataclass
class Params:
    mobility: dict = field(default_factory=dict)
    mobility_form: str = "degenerate"
    eps: dict = field(default_factory=dict)
    D: dict = field(default_factory=dict)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    adhesion: AdhesionSpec = field(default_factory=AdhesionSpec)
    rates: sources.RateParams = field(default_factory=sources.RateParams)
    switch: sources.SwitchSpec = field(default_factory=sources.SwitchSpec)
    flow: FlowParams = field(default_factory=FlowParams)
    elastic: ElasticParams = field(default_factory=ElasticParams)
    cell_kernel_strength: float = 1.0
    cell_kernel_width: float = 0.05
    haptotaxis_eps: float = 0.00525
    omega_scale: float = 0.75
    fractional: timefrac.FractionalSpec = field(default_factory=timefrac.FractionalSpec)
    noise: noise_mod.NoiseSpec = field(default_factory=noise_mod.NoiseSpec)
    wall: vessel_mod.WallParams = field(default_factory=vessel_mod.WallParams)
    D_v: float = 1.0
    vessel_ends: str = "closed"
    gs_tol: float = 1e-8
    gs_max_sweeps: int = 100
    newton_tol: float = 1e-12

    def __post_init__(self):
        if self.mobility_form not in ("degenerate", "constant"):
            raise ConfigError(f"unknown mobility form {self.mobility_form!r}")
        for name, table in (("mobility", self.mobility), ("eps", self.eps), ("D", self.D)):
            for k, v in table.items():
                if not np.isfinite(v) or v < 0:
                    raise ConfigError(f"{name}[{k}] must be finite and >= 0, got {v}")
        if self.vessel_ends not in ("closed", "open"):
            raise ConfigError(f"vessel_ends must be 'closed' or 'open', got {self.vessel_ends!r}")


def species_roles(config: ModelConfig) -> dict[str, tuple[str, ...]]:
    if config.model == "prototype-CH":
        return {"CH": ("phi",), "RD": (), "OD": ()}
    if config.model == "four-species":
        return {"CH": ("T",), "RD": ("sigma",) + (("CMT",) if config.chemo else ()), "OD": ()}
    return {"CH": ("P", "H", "N"), "RD": ("sigma", "MDE", "TAF"), "OD": ("ECM",)}


TUMOR_FIELD = {"prototype-CH": "phi", "four-species": "T"}
ADVECTED = {"phi", "T", "P", "H", "sigma"}


@dataclass
class SimState:
    fields: dict
    t: float = 0.0
    step: int = 0
    p: Array | None = None
    velocity: list | None = None
    u: list | None = None
    div_u: Array | None = None
    phi_v: Array | None = None
    p_v: Array | None = None
    history: timefrac.FractionalHistory | None = None
    stats: dict = field(default_factory=dict)

    def copy(self) -> "SimState":
        return SimState(
            {k: v.copy() for k, v in self.fields.items()},
            self.t,
            self.step,
            None if self.p is None else self.p.copy(),
            None if self.velocity is None else [v.copy() for v in self.velocity],
            None if self.u is None else [c.copy() for c in self.u],
            None if self.div_u is None else self.div_u.copy(),
            None if self.phi_v is None else self.phi_v.copy(),
            None if self.p_v is None else self.p_v.copy(),
            self.history,
            dict(self.stats),
        )


@dataclass
class Model:
    config: ModelConfig
    params: Params
    grid: Grid
    roles: dict
    network: vessel_mod.VesselNetwork | None = None
    _cache: dict = field(default_factory=dict)

    @property
    def species(self) -> tuple[str, ...]:
        return self.roles["CH"] + self.roles["RD"] + self.roles["OD"]

    @property
    def energy_params(self) -> EnergyParams:
        eps = {k: self.eps(k) for k in self.roles["CH"]}
        D = {k: self.D(k) for k in self.roles["RD"] if k != "CMT"}
        return EnergyParams({k: v for k, v in eps.items() if v > 0}, {k: v for k, v in D.items() if v > 0})

    def M(self, name: str) -> float:
        if self.config.model == "stratified-ECM" and name == "N":
            return 0.0
        return float(self.params.mobility.get(name, 1.0))

    def eps(self, name: str) -> float:
        return float(self.params.eps.get(name, 0.02))

    def D(self, name: str) -> float:
        return float(self.params.D.get(name, 1.0))

    @property
    def adhesion_eff(self) -> AdhesionSpec:
        """Adhesion energy coefficients; explicit haptotaxis fluxes replace chi_h."""
        a = self.params.adhesion
        if self.config.adhesion.startswith("haptotaxis"):
            return replace(a, chi_h=0.0)
        return a

    def tumor(self, fields: dict) -> Array:
        if self.config.model == "stratified-ECM":
            return fields["P"] + fields["H"] + fields["N"]
        return fields[TUMOR_FIELD[self.config.model]]

    def energy(self, fields: dict) -> float:
        keys = self.species
        sub = {k: fields[k] for k in keys if k != "CMT"}
        return total_energy(sub, self.grid, self.config.model, self.params.potential, self.energy_params, self.adhesion_eff)

    # cached operators
    def lap(self, bc_kind: str = "neumann") -> sp.csr_matrix:
        key = ("lap", bc_kind)
        if key not in self._cache:
            self._cache[key] = laplacian_matrix(self.grid, NEUMANN if bc_kind == "neumann" else dirichlet(0.0))
        return self._cache[key]

    def vessel_mesh(self):
        if "mesh" not in self._cache:
            mesh = vessel_mod.discretize(self.network)
            self._cache["mesh"] = mesh
            self._cache["avg"] = vessel_mod.averaging_matrix(mesh, self.grid)
        return self._cache["mesh"], self._cache["avg"]

    def noise_basis(self) -> Array:
        if "basis" not in self._cache:
            self._cache["basis"] = noise_mod.mode_basis(self.grid, self.params.noise.trunc)
        return self._cache["basis"]

    def cell_kernel(self) -> kernels.ScalarKernel:
        if "kernel" not in self._cache:
            self._cache["kernel"] = kernels.gaussian_kernel(self.params.cell_kernel_strength, self.params.cell_kernel_width)
        return self._cache["kernel"]


def assemble(config: ModelConfig, params: Params, grid: Grid, network: vessel_mod.VesselNetwork | None = None) -> Model:
    config.validate()
    if config.vessels:
        if network is None:
            raise ConfigError("vessels are on but no network was given")
        network.validate(grid)
        if grid.dims != 2:
            raise ConfigError("vessel coupling needs a 2D grid")
    if config.adhesion == "haptotaxis-nonlocal":
        if grid.dims != 2:
            raise ConfigError("nonlocal haptotaxis needs a 2D grid")
        try:
            kernels.moment_correction(kernels.VectorKernel(params.haptotaxis_eps, params.omega_scale), grid)
        except kernels.KernelError as e:
            raise ConfigError(f"nonlocal haptotaxis: {e}") from None
    model = Model(config, params, grid, species_roles(config), network)
    if config.vessels:
        model.vessel_mesh()
    if config.adhesion == "cell-cell":
        model.cell_kernel()
    return model


def initial_state(model: Model, fields: dict, t0: float = 0.0, phi_v: Array | None = None) -> SimState:
    missing = [k for k in model.species if k not in fields]
    if missing:
        raise GridError(f"initial state is missing field(s): {', '.join(missing)}")
    extra = [k for k in fields if k not in model.species]
    if extra:
        raise GridError(f"initial state has unknown field(s): {', '.join(extra)}")
    f = {k: check_field(fields[k], model.grid, k).copy() for k in model.species}
    state = SimState(f, t0, 0)
    if model.config.vessels:
        mesh, _ = model.vessel_mesh()
        state.phi_v = np.zeros(mesh.n_nodes) if phi_v is None else np.asarray(phi_v, dtype=float).copy()
    if model.config.time_kind == "fractional":
        name = TUMOR_FIELD[model.config.model]
        state.history = timefrac.FractionalHistory(cap=model.params.fractional.history_cap)
        state.history.append(t0, f[name])
    check_bounds(model, state)
    return state


def check_bounds(model: Model, state: SimState) -> None:
    for k, v in state.fields.items():
        if not np.all(np.isfinite(v)):
            raise StateError(f"field {k} became non-finite at step {state.step}")
        lo, hi = float(v.min()), float(v.max())
        if lo < HARD_BOUNDS[0] or hi > HARD_BOUNDS[1]:
            raise StateError(f"field {k} left [{HARD_BOUNDS[0]}, {HARD_BOUNDS[1]}] at step {state.step}: [{lo:.4g}, {hi:.4g}]")
        if lo < SOFT_BOUNDS[0] or hi > SOFT_BOUNDS[1]:
            warnings.warn(f"field {k} outside [{SOFT_BOUNDS[0]}, {SOFT_BOUNDS[1]}] at step {state.step}: [{lo:.4g}, {hi:.4g}]", BoundsWarning, stacklevel=3)


# -- building blocks -----------------------------------------------------------


def upwind_divergence(phi: Array, faces: list, grid: Grid) -> Array:
    """``div(phi v)`` from face velocities with first-order upwinding."""
    F = []
    for a, v in enumerate(faces):
        lo = [slice(None)] * grid.dims
        hi = [slice(None)] * grid.dims
        lo[a], hi[a] = slice(None, -1), slice(1, None)
        F.append(v * np.where(v > 0, phi[tuple(lo)], phi[tuple(hi)]))
    return divergence_of_face_flux(F, grid)


def advective_cfl(faces: list, grid: Grid) -> float:
    """Largest dt for which upwind advection removes at most a cell's content."""
    out = np.zeros(grid.shape)
    for a, (v, h) in enumerate(zip(faces, grid.spacing)):
        pw_lo = [(0, 0)] * grid.dims
        pw_hi = [(0, 0)] * grid.dims
        pw_lo[a], pw_hi[a] = (0, 1), (1, 0)
        out += np.pad(np.maximum(v, 0.0), pw_lo) / h + np.pad(np.maximum(-v, 0.0), pw_hi) / h
    peak = float(out.max())
    return np.inf if peak == 0 else 1.0 / peak


def cell_to_face(vec: list, grid: Grid) -> list:
    return [face_mobility(c, grid, a) for a, c in enumerate(vec)]


def ch_mobility(model: Model, name: str, phi: Array) -> Array:
    M = model.M(name)
    if model.params.mobility_form == "constant":
        return np.full(model.grid.shape, M)
    return M * phi**2 * (1.0 - phi) ** 2


def solve_ch_species(
    model: Model,
    phi_n: Array,
    a: float,
    rhs: Array,
    mob: Array,
    well: LandauWell,
    offset: Array | float,
    eps: float,
    mu_explicit: Array,
) -> tuple[Array, Array, int]:
    """Newton solve of the mixed convex-split system

    ``a phi - div(m grad mu) = rhs``,
    ``mu = Psi_c'(phi + offset) - eps^2 lap(phi) + mu_explicit``.

    The second block row has the identity on ``mu``, so each Newton update
    is solved through the Schur complement
    ``a I - Mob (Psi_c'' - eps^2 L)`` and ``mu`` is recovered exactly.  The
    factorization is reused while the iteration contracts quickly.
    """
    grid = model.grid
    n = grid.size
    L = model.lap()
    Mob = mobility_matrix(mob, grid)
    I = sp.identity(n, format="csr")
    eps2 = eps * eps
    phi = phi_n.ravel().copy()
    off = np.ravel(np.broadcast_to(offset, grid.shape))
    e = mu_explicit.ravel()
    r1 = rhs.ravel()
    tol = model.params.newton_tol
    epsL = eps2 * L

    def mu_of(x):
        return well.convex_d1(x + off) - epsL @ x + e

    lu = None
    last = np.inf
    for it in range(1, 101):
        mu = mu_of(phi)
        R = a * phi - Mob @ mu - r1
        if lu is None:
            S = (a * I - Mob @ (sp.diags(well.convex_d2(phi + off)) - epsL)).tocsc()
            lu = spla.splu(S, permc_spec="MMD_AT_PLUS_A")
        d = lu.solve(-R)
        if not np.all(np.isfinite(d)):
            raise SolverError("Cahn-Hilliard Newton step produced non-finite values", float("nan"), it)
        phi += d
        size = np.max(np.abs(d))
        if size <= tol * max(1.0, np.max(np.abs(phi))):
            return phi.reshape(grid.shape), mu_of(phi).reshape(grid.shape), it
        if size > 0.25 * last:
            lu = None
        last = size
    raise SolverError("Cahn-Hilliard Newton iteration did not converge", float(size), 100)


def solve_rd_species(model: Model, a: float, coef: float, rhs: Array, bc_value: float | None = None) -> Array:
    """``(a - coef lap) phi = rhs`` with Neumann or constant Dirichlet boundary."""
    grid = model.grid
    kind = "neumann" if bc_value is None else "dirichlet"
    key = ("rd", kind, a, coef)
    if key not in model._cache:
        A = (a * sp.identity(grid.size, format="csc") - coef * model.lap(kind)).tocsc()
        model._cache[key] = (A, spla.splu(A))
    A, lu = model._cache[key]
    b = rhs.ravel().copy()
    if bc_value is not None:
        b += coef * dirichlet_lift(grid, dirichlet(bc_value)).ravel()
    x = lu.solve(b)
    res = np.linalg.norm(A @ x - b)
    if not np.isfinite(res) or res > 1e-10 * max(np.linalg.norm(b), 1.0):
        raise SolverError("reaction-diffusion solve failed", res, 1)
    return x.reshape(grid.shape)


def compute_sources(model: Model, f: dict, t: float) -> dict:
    cfg, r = model.config, model.params.rates
    zero = np.zeros(model.grid.shape)
    S = {k: zero for k in model.species}
    if cfg.model == "four-species":
        S_T, S_s = sources.four_species_sources(f["T"], f["sigma"], r)
        S["T"], S["sigma"] = S_T, S_s
        if cfg.chemo:
            dS_T, S_C = sources.chemo_sources(f["T"], f["sigma"], np.maximum(f["CMT"], 0.0), r)
            S["T"] = S["T"] + dS_T
            S["CMT"] = S_C
    elif cfg.model == "stratified-ECM":
        S.update(sources.stratified_sources(f, r, model.params.switch))
    return S


# -- one step --------------------------------------------------------------------


def step(model: Model, state: SimState, dt: float) -> SimState:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    cfg, prm, grid = model.config, model.params, model.grid
    f = state.fields
    t_new = (state.step + 1) * dt + (state.t - state.step * dt)
    stats = {"newton": 0, "gs_sweeps": 0}
    S = compute_sources(model, f, state.t)
    dphi = adhesion_derivatives(f, cfg.model, model.adhesion_eff) if cfg.model != "prototype-CH" else {}
    tumor_name = TUMOR_FIELD.get(cfg.model)

    # explicit parts of the CH chemical potentials
    pot = prm.potential
    ch = model.roles["CH"]
    T_n = sum(f[k] for k in ch) if pot.form == "single" else None
    mu_expl = {}
    for k, name in enumerate(ch):
        well = pot.well(k)
        arg = T_n if pot.form == "single" else f[name]
        mu_expl[name] = well.expansive_d1(arg) + dphi.get(name, 0.0)
    if cfg.adhesion == "cell-cell":
        mu_expl[tumor_name] = mu_expl[tumor_name] + kernels.adhesion_potential_term(f[tumor_name], model.cell_kernel(), grid)

    # (1) elasticity
    u = div_u = None
    if cfg.elasticity:
        el = solve_elasticity(f[tumor_name], grid, prm.elastic)
        u, div_u = el.u, el.div_u
        mu_expl[tumor_name] = mu_expl[tumor_name] + prm.elastic.lambda_c * div_u

    # (2) flow
    faces = None
    p = p_v = p_bar = None
    if cfg.flow == "darcy":
        forcing = _korteweg_forcing(model, f, mu_expl, T_n if pot.form == "single" else None)
        settings = LinearSolveSettings(rel_tol=1e-10, method="direct")
        if cfg.vessels:
            mesh, avg = model.vessel_mesh()
            res = vessel_mod.coupled_pressure_iteration(
                grid, mesh, avg, prm.wall, prm.flow, p_init=state.p, tol=prm.gs_tol,
                max_sweeps=prm.gs_max_sweeps, settings=settings, forcing=forcing,
            )
            darcy, p_v, p_bar = res.darcy, res.p_v, res.p_bar
            stats["gs_sweeps"] = res.sweeps
        else:
            darcy = solve_darcy(grid, prm.flow, settings=settings, forcing=forcing)
        p, faces = darcy.p, darcy.faces
        adm = advective_cfl(faces, grid)
        if dt > adm * (1 + 1e-12):
            raise vessel_mod.CFLError(f"tissue advection step dt={dt:.6g} violates CFL", adm)

    # haptotaxis fluxes (cell centred, then averaged to faces)
    hapt = {}
    if cfg.adhesion.startswith("haptotaxis"):
        mode = "local" if cfg.adhesion == "haptotaxis-local" else "nonlocal"
        kern = kernels.VectorKernel(prm.haptotaxis_eps, prm.omega_scale) if mode == "nonlocal" else None
        if mode == "nonlocal":
            g = kernels.nonlocal_gradient(f["ECM"], kern, grid)
        else:
            g = kernels.haptotaxis_flux(np.ones(grid.shape), f["ECM"], grid, 1.0, "local")
        for name in ("P", "H"):
            J = [prm.adhesion.chi_h * f[name] * c for c in g]
            hapt[name] = -divergence_of_face_flux(cell_to_face(J, grid), grid)

    # vessel wall exchange, identical on both sides
    wall_J = deposit = None
    if cfg.vessels:
        phi_bar = vessel_mod.circumferential_average(f["sigma"], avg)
        wall_J = vessel_mod.kedem_katchalsky(phi_bar, p_bar, state.phi_v, p_v, prm.wall)
        deposit = vessel_mod.deposit_line_source(wall_J, mesh, avg, grid)

    new = {}
    mus = {}
    # (3) CH species
    for k, name in enumerate(ch):
        if model.M(name) == 0.0:
            new[name] = f[name] + dt * S[name]
            continue
        rhs = S[name].copy()
        if faces is not None and name in ADVECTED:
            rhs -= upwind_divergence(f[name], faces, grid)
        if name in hapt:
            rhs += hapt[name]
        if cfg.time_kind == "fractional" and name == tumor_name:
            a, b = timefrac.implicit_split(state.history, prm.fractional, t_new)
            rhs += b
        else:
            a = 1.0 / dt
            rhs += f[name] / dt
        well = pot.well(k)
        offset = (T_n - f[name]) if pot.form == "single" else 0.0
        mob = ch_mobility(model, name, f[name])
        phi_new, mu_new, its = solve_ch_species(model, f[name], a, rhs, mob, well, offset, model.eps(name), mu_expl[name])
        stats["newton"] += its
        new[name] = phi_new
        mus[name] = mu_new

    # (4) RD species
    for name in model.roles["RD"]:
        coef = model.M(name) * model.D(name)
        rhs = f[name] / dt + S[name]
        if faces is not None and name in ADVECTED:
            rhs = rhs - upwind_divergence(f[name], faces, grid)
        if name in dphi and np.any(dphi[name]):
            rhs = rhs + model.M(name) * laplacian(dphi[name], grid)
        if name == "sigma" and deposit is not None:
            rhs = rhs + deposit
        bc = sources.chemo_boundary(t_new) if name == "CMT" else None
        new[name] = solve_rd_species(model, 1.0 / dt, coef, rhs, bc)

    # (5) OD species
    for name in model.roles["OD"]:
        new[name] = f[name] + dt * S[name]

    # (6) vessel transport
    phi_v = state.phi_v
    if cfg.vessels:
        tr = vessel_mod.solve_vessel_transport(
            mesh, state.phi_v, p_v, dt, wall_J, prm.D_v, prm.vessel_ends, p_bar, prm.wall
        )
        phi_v = tr.phi_v
        stats["vessel_boundary_flux"] = tr.boundary_flux
        stats["wall_exchange"] = float(np.sum(mesh.wall * wall_J))

    # (7) noise
    if cfg.noise:
        spec = prm.noise
        rng = noise_mod.step_rng(spec.seed, state.step)
        dW = noise_mod.wiener_increment(grid, spec, dt, rng, model.noise_basis())
        gate = noise_mod.interface_gate(f[tumor_name], spec)
        new[tumor_name] = noise_mod.apply_noise(new[tumor_name], gate, dW)

    # (8) history
    if cfg.time_kind == "fractional":
        state.history.append(t_new, new[tumor_name])

    out = SimState(new, t_new, state.step + 1, p, faces, u, div_u, phi_v, p_v, state.history, stats)
    out.stats["mu"] = mus
    check_bounds(model, out)
    return out


def _korteweg_forcing(model: Model, f: dict, mu_expl: dict, T_n) -> list:
    """Face forcing ``sum_alpha mu_alpha grad(phi_alpha)`` at the old state
    (zero when the Korteweg option is off)."""
    grid, pot = model.grid, model.params.potential
    zeros = [np.zeros(grid.shape[:a] + (grid.shape[a] - 1,) + grid.shape[a + 1:]) for a in range(grid.dims)]
    if model.params.flow.korteweg == "off":
        return zeros
    out = zeros
    for k, name in enumerate(model.roles["CH"]):
        arg = T_n if T_n is not None else f[name]
        mu = pot.well(k).convex_d1(arg) + mu_expl[name] - model.eps(name) ** 2 * laplacian(f[name], grid)
        out = [x + y for x, y in zip(out, korteweg_faces(mu, f[name], grid))]
    return out


def add_segment(model: Model, state: SimState, seg: vessel_mod.Segment, nodes: dict | None = None) -> SimState:
    """Insert a vessel segment mid-run.

    The mesh is rebuilt; every new node takes the concentration of the
    nearest old node.
    """
    if not model.config.vessels:
        raise ConfigError("add-segment events need vessels on")
    old, _ = model.vessel_mesh()
    model.network.add_segment(seg, nodes)
    model.network.validate(model.grid)
    for key in ("mesh", "avg"):
        model._cache.pop(key, None)
    mesh, _ = model.vessel_mesh()
    d = np.linalg.norm(mesh.pos[:, None, :] - old.pos[None, :, :], axis=2)
    out = state.copy()
    out.phi_v = state.phi_v[np.argmin(d, axis=1)]
    out.p_v = None
    return out


# -- diagnostics and run ---------------------------------------------------------


def diagnostics(model: Model, state: SimState) -> dict:
    grid = model.grid
    row = {"step": state.step, "t": state.t, "energy": model.energy(state.fields)}
    for k in model.species:
        row[f"mass_{k}"] = grid.integrate(state.fields[k])
    row["tumor_volume"] = grid.integrate(model.tumor(state.fields))
    if model.config.vessels:
        mesh, _ = model.vessel_mesh()
        row["vessel_mass"] = mesh.mass(state.phi_v)
    row["newton_iters"] = state.stats.get("newton", 0)
    row["gs_sweeps"] = state.stats.get("gs_sweeps", 0)
    return row


def n_steps(t_end: float, dt: float) -> int:
    if not dt > 0 or t_end < 0:
        raise ValueError("need dt > 0 and t_end >= 0")
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(t_end, dt):
        raise ValueError(f"t_end={t_end} is not a multiple of dt={dt}")
    return n


def run(
    model: Model,
    state: SimState,
    t_end: float,
    dt: float,
    every: int = 1,
    on_output: Callable[[SimState, dict], None] | None = None,
    on_step: Callable[[SimState, dict], None] | None = None,
    events: list | None = None,
) -> list[dict]:
    """Advance to ``t_end`` and return diagnostics at every step.

    ``on_output`` fires on the initial state and every ``every`` steps (and
    at the last step); ``events`` are ``(t, callable(model, state))`` pairs
    applied before the first step whose start time is at or after ``t``.
    """
    if every < 1:
        raise ValueError("output cadence must be >= 1")
    steps = n_steps(t_end, dt)
    pending = sorted(events or [], key=lambda e: e[0])
    rows = [diagnostics(model, state)]
    if on_output:
        on_output(state, rows[-1])
    if on_step:
        on_step(state, rows[-1])
    for k in range(steps):
        while pending and pending[0][0] <= state.t + 1e-12:
            _, action = pending.pop(0)
            state = action(model, state) or state
        state = step(model, state, dt)
        rows.append(diagnostics(model, state))
        if on_step:
            on_step(state, rows[-1])
        if on_output and ((k + 1) % every == 0 or k + 1 == steps):
            on_output(state, rows[-1])
    return rows

"""Reduced 1D vessel networks coupled to a 2D tissue grid.

Each segment is split into ``cells`` edges; unknowns live on the resulting
nodes (node-centred finite volumes).  Node ``i`` owns half of every incident
edge: control length ``V_i`` and wall area ``a_i = sum 2 pi R l / 2``.  Tissue
values are averaged over a disk stencil around each node, and wall fluxes are
spread back over the same stencil, so exchange is exactly conservative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .elliptic import (
    DarcyResult,
    FlowParams,
    LinearSolveSettings,
    LineSource,
    SolverError,
    solve_darcy,
)
from .grid import Grid, GridError

Array = np.ndarray

NETWORK_HEADER = "# tumorpf-network v1"


class NetworkError(ValueError):
    pass


class CFLError(ValueError):
    def __init__(self, message: str, admissible_dt: float):
        super().__init__(f"{message}; admissible dt <= {admissible_dt:.6g}")
        self.admissible_dt = admissible_dt


@dataclass(frozen=True)
class Segment:
    id: int
    a: int
    b: int
    radius: float
    K_v: float
    cells: int = 8


@dataclass
class VesselNetwork:
    """Nodes ``id -> (x, y)``, segments and boundary data keyed by node id."""

    nodes: dict = field(default_factory=dict)
    segments: list = field(default_factory=list)
    pressure: dict = field(default_factory=dict)
    concentration: dict = field(default_factory=dict)

    def validate(self, grid: Grid | None = None) -> None:
        ids = set()
        for s in self.segments:
            if s.id in ids:
                raise NetworkError(f"duplicate segment id {s.id}")
            ids.add(s.id)
            for n in (s.a, s.b):
                if n not in self.nodes:
                    raise NetworkError(f"segment {s.id} references unknown node {n}")
            if s.a == s.b:
                raise NetworkError(f"segment {s.id} is a loop")
            if not s.radius > 0 or not s.K_v > 0:
                raise NetworkError(f"segment {s.id} needs radius > 0 and K_v > 0")
            if int(s.cells) != s.cells or s.cells < 1:
                raise NetworkError(f"segment {s.id} needs an integer cell count >= 1")
        for table, name in ((self.pressure, "pressure"), (self.concentration, "concentration")):
            for n, v in table.items():
                if n not in self.nodes:
                    raise NetworkError(f"{name} condition on unknown node {n}")
                if not np.isfinite(v):
                    raise NetworkError(f"{name} condition on node {n} is not finite")
        if grid is not None:
            for n, (x, y) in self.nodes.items():
                if not (0 <= x <= grid.extents[0] and 0 <= y <= grid.extents[1]):
                    raise NetworkError(f"node {n} at ({x}, {y}) lies outside the domain")

    def add_segment(self, seg: Segment, nodes: Mapping | None = None) -> None:
        for k, v in (nodes or {}).items():
            self.nodes[k] = tuple(float(c) for c in v)
        self.segments.append(seg)
        self.validate()


def parse_network(text: str) -> VesselNetwork:
    lines = text.splitlines()
    if not lines or lines[0].strip() != NETWORK_HEADER:
        raise NetworkError(f"network file must start with {NETWORK_HEADER!r}")
    net = VesselNetwork()
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "node" and len(args) == 3:
                net.nodes[int(args[0])] = (float(args[1]), float(args[2]))
            elif kind == "segment" and len(args) == 6:
                net.segments.append(
                    Segment(int(args[0]), int(args[1]), int(args[2]), float(args[3]), float(args[4]), int(args[5]))
                )
            elif kind == "pressure" and len(args) == 2:
                net.pressure[int(args[0])] = float(args[1])
            elif kind == "concentration" and len(args) == 2:
                net.concentration[int(args[0])] = float(args[1])
            else:
                raise NetworkError(f"line {lineno}: cannot parse {raw.strip()!r}")
        except ValueError as e:
            if isinstance(e, NetworkError):
                raise
            raise NetworkError(f"line {lineno}: {e}") from None
    net.validate()
    return net


def format_network(net: VesselNetwork) -> str:
    out = [NETWORK_HEADER]
    for n, (x, y) in net.nodes.items():
        out.append(f"node {n} {x!r} {y!r}")
    for s in net.segments:
        out.append(f"segment {s.id} {s.a} {s.b} {s.radius!r} {s.K_v!r} {s.cells}")
    for n, v in net.pressure.items():
        out.append(f"pressure {n} {v!r}")
    for n, v in net.concentration.items():
        out.append(f"concentration {n} {v!r}")
    return "\n".join(out) + "\n"


def load_network(path) -> VesselNetwork:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())


@dataclass(frozen=True)
class WallParams:
    L_p: float = 1.0
    L_sigma: float = 1.0
    r_sigma: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.L_p) and self.L_p >= 0 and np.isfinite(self.L_sigma) and self.L_sigma >= 0):
            raise ValueError("wall permeabilities must be finite and >= 0")
        if not 0 <= self.r_sigma <= 1:
            raise ValueError("reflection parameter must lie in [0, 1]")


def kedem_katchalsky(phi_bar, p_bar, phi_v, p_v, w: WallParams):
    """Wall flux per unit surface, positive from vessel to tissue."""
    phi_v = np.asarray(phi_v, dtype=float)
    p_v = np.asarray(p_v, dtype=float)
    f = np.where(p_v >= p_bar, phi_v, phi_bar)
    out = (1.0 - w.r_sigma) * f * w.L_p * (p_v - p_bar) + w.L_sigma * (phi_v - phi_bar)
    return out if out.ndim else float(out)


@dataclass
class VesselMesh:
    """Discretized network: node positions, edges and FV geometry."""

    pos: Array
    edges: Array
    length: Array
    radius: Array
    K_v: Array
    control: Array
    wall: Array
    node_radius: Array
    dirichlet_p: dict
    dirichlet_c: dict
    labels: dict

    @property
    def n_nodes(self) -> int:
        return self.pos.shape[0]

    @property
    def conductance(self) -> Array:
        return self.radius**2 * np.pi * self.K_v / self.length

    def mass(self, phi_v: Array) -> float:
        return float(np.sum(self.control * phi_v))


def discretize(net: VesselNetwork) -> VesselMesh:
    net.validate()
    if not net.segments:
        raise NetworkError("network has no segments")
    index: dict[int, int] = {}
    pos = []
    for n, xy in net.nodes.items():
        index[n] = len(pos)
        pos.append(xy)
    edges, radius, K_v = [], [], []
    for s in net.segments:
        pa, pb = np.asarray(net.nodes[s.a]), np.asarray(net.nodes[s.b])
        chain = [index[s.a]]
        for k in range(1, s.cells):
            chain.append(len(pos))
            pos.append(tuple(pa + (pb - pa) * k / s.cells))
        chain.append(index[s.b])
        for i, j in zip(chain[:-1], chain[1:]):
            edges.append((i, j))
            radius.append(s.radius)
            K_v.append(s.K_v)
    pos = np.asarray(pos, dtype=float)
    edges = np.asarray(edges, dtype=int)
    length = np.linalg.norm(pos[edges[:, 1]] - pos[edges[:, 0]], axis=1)
    if np.any(length <= 0):
        raise NetworkError("network has a zero-length edge")
    radius = np.asarray(radius)
    n = len(pos)
    control = np.zeros(n)
    wall = np.zeros(n)
    node_radius = np.zeros(n)
    for e, (i, j) in enumerate(edges):
        for k in (i, j):
            control[k] += 0.5 * length[e]
            wall[k] += np.pi * radius[e] * length[e]
            node_radius[k] = max(node_radius[k], radius[e])
    return VesselMesh(
        pos, edges, length, radius, np.asarray(K_v), control, wall, node_radius,
        {index[k]: v for k, v in net.pressure.items()},
        {index[k]: v for k, v in net.concentration.items()},
        index,
    )


def averaging_matrix(mesh: VesselMesh, grid: Grid) -> sp.csr_matrix:
    """Row ``i`` averages tissue cells whose centres lie within ``max(R_i, h)``
    of node ``i``; for ``R_i < h/2`` only the containing cell is used."""
    if grid.dims != 2:
        raise GridError("vessel coupling needs a 2D tissue grid")
    h = min(grid.spacing)
    xs, ys = grid.axis_centers(0), grid.axis_centers(1)
    rows, cols, vals = [], [], []
    for i, (x, y) in enumerate(mesh.pos):
        if not (0 <= x <= grid.extents[0] and 0 <= y <= grid.extents[1]):
            raise GridError(f"vessel node {i} lies outside the tissue domain")
        R = mesh.node_radius[i]
        if R < 0.5 * h:
            cells = [grid.locate((x, y))]
        else:
            r = max(R, h)
            ix = np.nonzero(np.abs(xs - x) <= r * (1 + 1e-12))[0]
            iy = np.nonzero(np.abs(ys - y) <= r * (1 + 1e-12))[0]
            cells = [
                (a, b) for a in ix for b in iy
                if (xs[a] - x) ** 2 + (ys[b] - y) ** 2 <= r * r * (1 + 1e-12)
            ]
        if not cells:
            raise GridError(f"empty averaging stencil at vessel node {i}")
        for a, b in cells:
            rows.append(i)
            cols.append(a * grid.cells[1] + b)
            vals.append(1.0 / len(cells))
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, grid.size))


def circumferential_average(field: Array, avg: sp.csr_matrix) -> Array:
    return avg @ np.ravel(field)


def deposit_line_source(flux: Array, mesh: VesselMesh, avg: sp.csr_matrix, grid: Grid) -> Array:
    """Tissue density of the per-surface node fluxes ``flux``.

    The domain integral of the output equals ``sum_i a_i flux_i``.
    """
    flux = np.asarray(flux, dtype=float)
    if not np.all(np.isfinite(flux)):
        raise ValueError("non-finite vessel flux")
    return (avg.T @ (mesh.wall * flux)).reshape(grid.shape) / grid.cell_volume


def _check_components(mesh: VesselMesh):
    n = mesh.n_nodes
    adj = sp.csr_matrix((np.ones(len(mesh.edges)), (mesh.edges[:, 0], mesh.edges[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    fixed = {labels[i] for i in mesh.dirichlet_p}
    missing = sorted(set(range(ncomp)) - fixed)
    if missing:
        raise NetworkError(f"{len(missing)} network component(s) have no prescribed pressure")


def pressure_matrix(mesh: VesselMesh, w: WallParams) -> sp.csr_matrix:
    """Rows ``sum c_e (p_i - p_j) + a_i L_p p_i`` (Dirichlet rows not applied)."""
    n = mesh.n_nodes
    c = mesh.conductance
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    A = sp.csr_matrix((np.concatenate([c, c, -c, -c]), (np.concatenate([i, j, i, j]), np.concatenate([i, j, j, i]))), shape=(n, n))
    return (A + sp.diags(mesh.wall * w.L_p)).tocsr()


def solve_vessel_pressure(mesh: VesselMesh, p_bar: Array, w: WallParams) -> Array:
    _check_components(mesh)
    A = pressure_matrix(mesh, w).tolil()
    b = mesh.wall * w.L_p * np.asarray(p_bar, dtype=float)
    for i, v in mesh.dirichlet_p.items():
        A.rows[i] = [i]
        A.data[i] = [1.0]
        b[i] = v
    A = A.tocsc()
    p_v = spla.splu(A).solve(b)
    res = np.linalg.norm(A @ p_v - b)
    if not np.isfinite(res) or res > 1e-10 * max(np.linalg.norm(b), 1.0):
        raise SolverError("vessel pressure solve failed", res, 1)
    return p_v


def boundary_inflow(mesh: VesselMesh, p_v: Array, p_bar: Array, w: WallParams) -> Array:
    """Volumetric inflow from outside the network at Dirichlet nodes (0 elsewhere)."""
    q = pressure_matrix(mesh, w) @ p_v - mesh.wall * w.L_p * np.asarray(p_bar, dtype=float)
    out = np.zeros(mesh.n_nodes)
    for i in mesh.dirichlet_p:
        out[i] = q[i]
    return out


def edge_velocity(mesh: VesselMesh, p_v: Array) -> Array:
    """``-R^2 pi K_v dp/ds`` on each edge, positive from its first to its second node."""
    return -mesh.conductance * (p_v[mesh.edges[:, 1]] - p_v[mesh.edges[:, 0]])


@dataclass
class TransportResult:
    phi_v: Array
    boundary_flux: float
    admissible_dt: float


def solve_vessel_transport(
    mesh: VesselMesh,
    phi_v: Array,
    p_v: Array,
    dt: float,
    wall_flux: Array,
    D_v: float = 1.0,
    ends: str = "closed",
    p_bar: Array | None = None,
    w: WallParams | None = None,
) -> TransportResult:
    """Implicit diffusion, explicit upwind advection and explicit wall loss.

    ``wall_flux`` is the per-surface Kedem-Katchalsky flux (vessel to tissue).
    With ``ends="closed"`` no mass crosses the network ends, so
    ``mass_new = mass_old - dt * sum a_i J_i`` exactly.  With ``ends="open"``
    nodes carrying a concentration condition are held at that value and
    outflow leaves through the remaining pressure nodes.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if ends not in ("closed", "open"):
        raise ValueError(f"unknown end condition {ends!r}")
    phi_v = np.asarray(phi_v, dtype=float)
    n = mesh.n_nodes
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    v = edge_velocity(mesh, p_v)

    # CFL: outflow from each node within one step must not exceed its content
    out_rate = np.zeros(n)
    np.add.at(out_rate, i, np.maximum(v, 0.0))
    np.add.at(out_rate, j, np.maximum(-v, 0.0))
    q_ext = np.zeros(n)
    if ends == "open":
        if p_bar is None or w is None:
            raise ValueError("open ends need p_bar and wall parameters")
        q_ext = boundary_inflow(mesh, p_v, p_bar, w)
        out_rate += np.maximum(-q_ext, 0.0)
    with np.errstate(divide="ignore"):
        adm = float(np.min(np.where(out_rate > 0, mesh.control / np.where(out_rate > 0, out_rate, 1.0), np.inf)))
    if dt > adm * (1 + 1e-12):
        raise CFLError(f"vessel advection step dt={dt:.6g} violates CFL", adm)

    up = np.where(v > 0, phi_v[i], phi_v[j])
    F = v * up
    adv = np.zeros(n)
    np.add.at(adv, i, -F)
    np.add.at(adv, j, F)
    if ends == "open":
        adv += np.where(q_ext < 0, q_ext * phi_v, 0.0)

    rhs = mesh.control * phi_v / dt + adv - mesh.wall * np.asarray(wall_flux, dtype=float)
    d = D_v / mesh.length
    K = sp.csr_matrix((np.concatenate([d, d, -d, -d]), (np.concatenate([i, j, i, j]), np.concatenate([i, j, j, i]))), shape=(n, n))
    A = (sp.diags(mesh.control / dt) + K).tolil()
    if ends == "open":
        for k, c in mesh.dirichlet_c.items():
            A.rows[k] = [k]
            A.data[k] = [1.0]
            rhs[k] = c
    A = A.tocsc()
    new = spla.splu(A).solve(rhs)
    res = np.linalg.norm(A @ new - rhs)
    if not np.isfinite(res) or res > 1e-10 * max(np.linalg.norm(rhs), 1.0):
        raise SolverError("vessel transport solve failed", res, 1)
    expected = mesh.mass(phi_v) - dt * float(np.sum(mesh.wall * wall_flux))
    return TransportResult(new, (mesh.mass(new) - expected) / dt, adm)


def line_source(mesh: VesselMesh, avg: sp.csr_matrix, grid: Grid, p_v: Array, w: WallParams) -> LineSource:
    """Darcy line source ``Avg^T a L_p (p_v - Avg p) / h^d`` split into rhs and matrix."""
    coef = mesh.wall * w.L_p
    C = (avg.T @ sp.diags(coef) @ avg) / grid.cell_volume
    rhs = (avg.T @ (coef * p_v)) / grid.cell_volume
    return LineSource(sp.csr_matrix(C), rhs)


@dataclass
class CoupledResult:
    darcy: DarcyResult
    p_v: Array
    p_bar: Array
    sweeps: int
    increment: float


def coupled_pressure_iteration(
    grid: Grid,
    mesh: VesselMesh,
    avg: sp.csr_matrix,
    w: WallParams,
    flow: FlowParams = FlowParams(),
    mu: Array | None = None,
    phi: Array | None = None,
    p_init: Array | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 200,
    settings: LinearSolveSettings = LinearSolveSettings(method="direct"),
    forcing: list | None = None,
) -> CoupledResult:
    """Block Gauss-Seidel: vessel pressure from the current tissue pressure,
    then Darcy with the implicit line source, until the relative change of
    the tissue pressure drops below ``tol``.

    ``sweeps`` counts the sweeps that changed the pressure; the final
    confirming sweep is not counted, so a converged start reports 0.
    """
    p = np.zeros(grid.shape) if p_init is None else np.array(p_init, dtype=float)
    inc = np.inf
    for k in range(max_sweeps + 1):
        p_bar = circumferential_average(p, avg)
        p_v = solve_vessel_pressure(mesh, p_bar, w)
        line = line_source(mesh, avg, grid, p_v, w)
        res = solve_darcy(grid, flow, mu, phi, line=line, settings=settings, forcing=forcing)
        diff = np.linalg.norm(res.p - p)
        scale = np.linalg.norm(res.p)
        inc = 0.0 if diff == 0.0 else diff / max(scale, 1e-300)
        p = res.p
        if inc < tol:
            return CoupledResult(res, p_v, p_bar, k, inc)
    raise SolverError(f"Gauss-Seidel coupling did not converge in {max_sweeps} sweeps", inc, max_sweeps)

"""Steady solves: Darcy pressure/velocity and clamped linear elasticity.

Darcy uses cell-centred finite volumes.  Face velocities are
``v_f = -K (dp/h - S_f)`` on interior faces and zero on the boundary, so the
discrete divergence telescopes exactly.  Elasticity is the plane-strain
Navier-Lame system with compositional stress ``lambda phi I`` and zero
displacement on the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    NEUMANN,
    Grid,
    GridError,
    check_field,
    dirichlet,
    divergence,
    divergence_of_face_flux,
    face_difference,
    face_mobility,
    gradient,
    laplacian_matrix,
)

Array = np.ndarray


class SolverError(RuntimeError):
    """Linear solve failed; ``residual`` holds the last residual norm."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (residual {residual:.3e}, {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class LinearSolveSettings:
    rel_tol: float = 1e-8
    max_iters: int = 10_000
    method: str = "cg"

    def __post_init__(self):
        if not 0 < self.rel_tol < 1e-2:
            raise ValueError("rel_tol must lie in (0, 1e-2)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.method not in ("cg", "direct"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass
class SolveInfo:
    iterations: int = 0
    residual: float = 0.0


def linear_solve(A, b: Array, settings: LinearSolveSettings = LinearSolveSettings(), nullspace: str | None = None):
    """Solve ``A x = b`` for symmetric ``A``.

    ``nullspace="constant"`` removes the constant mode: ``b`` is projected to
    zero mean and the solution is returned with zero mean.  Returns
    ``(x, SolveInfo)``.
    """
    b = np.asarray(b, dtype=float).ravel()
    n = b.size
    if nullspace not in (None, "constant"):
        raise ValueError(f"unknown nullspace {nullspace!r}")
    if nullspace == "constant":
        b = b - b.mean()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(0, 0.0)
    A = sp.csr_matrix(A)

    if settings.method == "direct":
        if nullspace == "constant":
            ones = np.ones((n, 1))
            M = sp.bmat([[A, sp.csr_matrix(ones)], [sp.csr_matrix(ones.T), None]], format="csc")
            x = spla.splu(M).solve(np.append(b, 0.0))[:n]
        else:
            x = spla.splu(sp.csc_matrix(A)).solve(b)
        iters = 1
    else:
        count = [0]

        def cb(_):
            count[0] += 1

        x, flag = spla.cg(A, b, rtol=settings.rel_tol, atol=0.0, maxiter=settings.max_iters, callback=cb)
        iters = count[0]
        if nullspace == "constant":
            x = x - x.mean()
        if flag > 0:
            raise SolverError("conjugate gradients did not converge", np.linalg.norm(A @ x - b), iters)

    if nullspace == "constant":
        x = x - x.mean()
    res = float(np.linalg.norm(A @ x - b))
    if not np.isfinite(res) or res > settings.rel_tol * bnorm:
        raise SolverError("linear solve residual above tolerance", res, iters)
    return x, SolveInfo(iters, res)


# -- Darcy -------------------------------------------------------------------


@dataclass(frozen=True)
class FlowParams:
    K: float = 1.0
    korteweg: str = "mu-grad-phi"

    def __post_init__(self):
        if not np.isfinite(self.K) or self.K <= 0:
            raise ValueError("permeability K must be finite and > 0")
        if self.korteweg not in ("off", "mu-grad-phi"):
            raise ValueError(f"unknown Korteweg option {self.korteweg!r}")


@dataclass
class LineSource:
    """Implicit tissue source ``rhs - C p`` (per unit volume)."""

    C: sp.spmatrix
    rhs: Array


@dataclass
class DarcyResult:
    p: Array
    faces: list
    div_v: Array
    info: SolveInfo = field(default_factory=SolveInfo)

    def cell_velocity(self, grid: Grid) -> list[Array]:
        """Face velocities averaged to cell centres."""
        out = []
        for a, F in enumerate(self.faces):
            pw = [(0, 0)] * grid.dims
            pw[a] = (1, 1)
            Fp = np.pad(F, pw)
            lo = [slice(None)] * grid.dims
            hi = [slice(None)] * grid.dims
            lo[a], hi[a] = slice(None, -1), slice(1, None)
            out.append(0.5 * (Fp[tuple(lo)] + Fp[tuple(hi)]))
        return out


def korteweg_faces(mu: Array, phi: Array, grid: Grid) -> list[Array]:
    """``S = mu grad(phi)`` on interior faces."""
    return [face_mobility(mu, grid, a) * face_difference(phi, grid, a) for a in range(grid.dims)]


def solve_darcy(
    grid: Grid,
    flow: FlowParams = FlowParams(),
    mu: Array | None = None,
    phi: Array | None = None,
    line: LineSource | None = None,
    source: Array | None = None,
    settings: LinearSolveSettings = LinearSolveSettings(method="direct"),
    forcing: list | None = None,
) -> DarcyResult:
    """Solve ``div v = q`` with ``v = -K(grad p - S)``.

    ``q`` is the optional volumetric ``source`` plus the line source.  Without
    a line source the total of ``q`` must vanish and ``p`` has zero mean.
    ``S`` is ``mu grad(phi)`` on faces, or the face arrays in ``forcing``.
    """
    if forcing is not None:
        S = list(forcing)
    elif flow.korteweg == "mu-grad-phi" and mu is not None and phi is not None:
        S = korteweg_faces(check_field(mu, grid, "mu"), check_field(phi, grid, "phi"), grid)
    else:
        S = [np.zeros(grid.shape[:a] + (grid.shape[a] - 1,) + grid.shape[a + 1:]) for a in range(grid.dims)]

    q = np.zeros(grid.shape) if source is None else check_field(source, grid, "source").copy()
    A = -flow.K * laplacian_matrix(grid, NEUMANN)
    if line is not None:
        q = q + np.reshape(line.rhs, grid.shape)
        A = (A + sp.csr_matrix(line.C)).tocsr()
    rhs = q - flow.K * divergence_of_face_flux(S, grid)

    if line is None or sp.csr_matrix(line.C).count_nonzero() == 0:
        total = grid.integrate(q)
        scale = max(1.0, grid.integrate(np.abs(q)))
        if abs(total) > 1e-10 * scale:
            raise GridError(f"incompatible Darcy source: total {total:.3e} with zero-flux boundaries")
        p, info = linear_solve(A, rhs.ravel(), settings, nullspace="constant")
    else:
        p, info = linear_solve(A, rhs.ravel(), settings)
    p = p.reshape(grid.shape)

    faces = [-flow.K * (face_difference(p, grid, a) - S[a]) for a in range(grid.dims)]
    div_v = divergence_of_face_flux(faces, grid)
    return DarcyResult(p, faces, div_v, info)


# -- elasticity ----------------------------------------------------------------


@dataclass(frozen=True)
class ElasticParams:
    G: float = 1.0
    nu: float = 0.3
    lambda_c: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.nu) or self.nu >= 0.5 or self.nu <= -1.0:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.nu}")
        if not self.G > 0 or not self.lambda_c > 0:
            raise ValueError("shear modulus and coupling lambda must be > 0")

    @property
    def lame(self) -> float:
        return 2.0 * self.G * self.nu / (1.0 - 2.0 * self.nu)


def _second_diff_clamped(n: int, h: float) -> sp.csr_matrix:
    # ghost = -interior at both ends
    main = np.full(n, -2.0)
    main[0] = main[-1] = -3.0
    return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1], format="csr") / h**2


def _first_diff_clamped(n: int, h: float) -> sp.csr_matrix:
    main = np.zeros(n)
    main[0], main[-1] = 1.0, -1.0
    return sp.diags([-np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1], format="csr") / (2.0 * h)


def elasticity_matrix(grid: Grid, params: ElasticParams) -> sp.csr_matrix:
    """Navier-Lame operator ``G lap u + (G + Lambda) grad div u``."""
    G, c = params.G, params.G + params.lame
    if grid.dims == 1:
        (n,), (h,) = grid.cells, grid.spacing
        return ((G + c) * _second_diff_clamped(n, h)).tocsr()
    (nx, ny), (hx, hy) = grid.cells, grid.spacing
    Ix, Iy = sp.identity(nx), sp.identity(ny)
    Dxx = sp.kron(_second_diff_clamped(nx, hx), Iy)
    Dyy = sp.kron(Ix, _second_diff_clamped(ny, hy))
    Dxy = sp.kron(_first_diff_clamped(nx, hx), _first_diff_clamped(ny, hy))
    lap = Dxx + Dyy
    return sp.bmat([[G * lap + c * Dxx, c * Dxy], [c * Dxy, G * lap + c * Dyy]], format="csr")


@dataclass
class ElasticResult:
    u: list
    div_u: Array
    residual: float


def solve_elasticity(
    phi_T: Array,
    grid: Grid,
    params: ElasticParams = ElasticParams(),
    body_force: list | None = None,
    rel_tol: float = 1e-10,
) -> ElasticResult:
    """Clamped displacement under the eigen-stress ``lambda phi_T I``.

    The centred cross derivatives make the operator nonsymmetric, so the
    system is solved directly.
    """
    phi_T = check_field(phi_T, grid, "phi_T")
    if grid.dims not in (1, 2):
        raise GridError("elasticity supports 1D and 2D grids")
    grad = gradient(phi_T, grid, NEUMANN)
    rhs = [-params.lambda_c * g for g in grad]
    if body_force is not None:
        if len(body_force) != grid.dims:
            raise GridError("body force needs one component per axis")
        rhs = [r - check_field(f, grid, "body force") for r, f in zip(rhs, body_force)]
    b = np.concatenate([r.ravel() for r in rhs])
    A = elasticity_matrix(grid, params)
    if not np.any(b):
        x = np.zeros_like(b)
        res = 0.0
    else:
        x = spla.splu(A.tocsc()).solve(b)
        res = float(np.linalg.norm(A @ x - b))
        if not np.isfinite(res) or res > rel_tol * np.linalg.norm(b):
            raise SolverError("elasticity solve failed", res, 1)
    u = [x[k * grid.size:(k + 1) * grid.size].reshape(grid.shape) for k in range(grid.dims)]
    div_u = divergence(u, grid, dirichlet(0.0))
    return ElasticResult(u, div_u, res)

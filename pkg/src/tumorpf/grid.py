"""Structured cell-centred grids and second-order finite-difference operators.

Fields are plain ``numpy`` arrays of shape ``grid.shape`` (``indexing='ij'``,
axis 0 is x).  Boundary conditions are realised with one ghost layer so every
stencil is uniform.  Operators allocate fresh outputs and never mutate inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp

Array = np.ndarray
BoundaryValue = Union[float, Callable[[float], float]]


class GridError(ValueError):
    """Raised for malformed grids, fields or boundary conditions."""


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid of ``cells`` over ``[0, extents]``.

    Example:
        >>> g = Grid(extents=(1.0, 1.0), cells=(64, 64))
        >>> g.spacing
        (0.015625, 0.015625)
    """

    extents: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        ext = tuple(float(e) for e in self.extents)
        cells = tuple(int(c) for c in self.cells)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "cells", cells)
        if len(ext) not in (1, 2) or len(ext) != len(cells):
            raise GridError(f"grid must be 1D or 2D with matching extents/cells, got {ext}, {cells}")
        if any(c < 4 for c in cells):
            raise GridError(f"need at least 4 cells per axis, got {cells}")
        if any(not np.isfinite(e) or e <= 0 for e in ext):
            raise GridError(f"extents must be finite and positive, got {ext}")

    @property
    def dims(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extents, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def axis_centers(self, axis: int) -> Array:
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def centers(self) -> tuple[Array, ...]:
        """Cell-centre coordinate arrays, each of shape ``self.shape``."""
        axes = [self.axis_centers(a) for a in range(self.dims)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def zeros(self) -> Array:
        return np.zeros(self.shape)

    def full(self, value: float) -> Array:
        return np.full(self.shape, float(value))

    def integrate(self, f: Array) -> float:
        """Midpoint-rule integral of a cell field."""
        return float(np.sum(f) * self.cell_volume)

    def locate(self, point: Sequence[float]) -> tuple[int, ...]:
        """Index of the cell containing ``point`` (clamped to the grid)."""
        idx = []
        for a in range(self.dims):
            i = int(np.floor(point[a] / self.spacing[a]))
            idx.append(min(max(i, 0), self.cells[a] - 1))
        return tuple(idx)


@dataclass(frozen=True)
class BoundaryCondition:
    """Zero-flux Neumann or Dirichlet with a time-dependent boundary value."""

    kind: str = "neumann"
    value: BoundaryValue = field(default=0.0)

    def __post_init__(self):
        if self.kind not in ("neumann", "dirichlet"):
            raise GridError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "dirichlet" and not callable(self.value):
            if not np.isfinite(float(self.value)):
                raise GridError("Dirichlet value must be finite")

    def at(self, t: float) -> float:
        v = self.value(t) if callable(self.value) else self.value
        return float(v)


NEUMANN = BoundaryCondition()


def dirichlet(value: BoundaryValue) -> BoundaryCondition:
    return BoundaryCondition("dirichlet", value)


def check_field(f: Array, grid: Grid, name: str = "field") -> Array:
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise GridError(f"{name} has shape {f.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(f)):
        bad = int(np.size(f) - np.count_nonzero(np.isfinite(f)))
        raise GridError(f"{name} contains {bad} non-finite value(s)")
    return f


def pad(f: Array, grid: Grid, bc: BoundaryCondition = NEUMANN, t: float = 0.0) -> Array:
    """Return ``f`` with one ghost layer filled according to ``bc``.

    Dirichlet ghosts reflect through the boundary face value ``g``
    (``ghost = 2g - interior``); corner ghosts are filled the same way from
    the already padded edges.
    """
    f = check_field(f, grid)
    out = np.pad(f, 1, mode="edge")
    if bc.kind == "dirichlet":
        g = bc.at(t)
        for a in range(grid.dims):
            lo = [slice(None)] * grid.dims
            lo_in = [slice(None)] * grid.dims
            hi = [slice(None)] * grid.dims
            hi_in = [slice(None)] * grid.dims
            lo[a], lo_in[a], hi[a], hi_in[a] = 0, 1, -1, -2
            out[tuple(lo)] = 2.0 * g - out[tuple(lo_in)]
            out[tuple(hi)] = 2.0 * g - out[tuple(hi_in)]
    return out


def _shift(a: Array, axis: int, lo: int, hi: int) -> Array:
    idx = [slice(1, -1)] * a.ndim
    idx[axis] = slice(lo, a.shape[axis] + hi if hi else None)
    return a[tuple(idx)]


def laplacian(f: Array, grid: Grid, bc: BoundaryCondition = NEUMANN, t: float = 0.0) -> Array:
    """3-point (1D) / 5-point (2D) Laplacian with ghost values from ``bc``."""
    fp = pad(f, grid, bc, t)
    out = np.zeros(grid.shape)
    for a, h in enumerate(grid.spacing):
        out += (_shift(fp, a, 2, 0) - 2.0 * _shift(fp, a, 1, -1) + _shift(fp, a, 0, -2)) / h**2
    return out


def face_mobility(m: Array, grid: Grid, axis: int) -> Array:
    """Arithmetic mean of ``m`` on the interior faces normal to ``axis``."""
    lo = [slice(None)] * grid.dims
    hi = [slice(None)] * grid.dims
    lo[axis], hi[axis] = slice(None, -1), slice(1, None)
    return 0.5 * (m[tuple(lo)] + m[tuple(hi)])


def face_difference(f: Array, grid: Grid, axis: int) -> Array:
    """``(f[i+1] - f[i]) / h`` on the interior faces normal to ``axis``."""
    return np.diff(f, axis=axis) / grid.spacing[axis]


def divergence_of_face_flux(fluxes: Sequence[Array], grid: Grid) -> Array:
    """Cell divergence of interior face fluxes; boundary faces carry zero flux."""
    out = np.zeros(grid.shape)
    for a, (F, h) in enumerate(zip(fluxes, grid.spacing)):
        pad_width = [(0, 0)] * grid.dims
        pad_width[a] = (1, 1)
        Fp = np.pad(F, pad_width)
        out += np.diff(Fp, axis=a) / h
    return out


def div_mobility_grad(
    m: Array, mu: Array, grid: Grid, bc: BoundaryCondition = NEUMANN, t: float = 0.0
) -> Array:
    """Conservative ``div(m grad mu)``.

    Face mobility is the arithmetic mean of the adjacent cells.  With
    Neumann ``bc`` the boundary faces carry no flux, so the domain sum of the
    result telescopes to zero.  For Dirichlet ``bc`` the boundary face uses
    the cell mobility and the ghost value of ``mu``.
    """
    m = check_field(m, grid, "mobility")
    mu = check_field(mu, grid, "mu")
    if np.any(m < 0):
        raise GridError(f"mobility must be non-negative (min {m.min():.3e})")
    if bc.kind == "neumann":
        fluxes = [face_mobility(m, grid, a) * face_difference(mu, grid, a) for a in range(grid.dims)]
        return divergence_of_face_flux(fluxes, grid)
    mp = pad(m, grid, NEUMANN)
    mup = pad(mu, grid, bc, t)
    out = np.zeros(grid.shape)
    for a, h in enumerate(grid.spacing):
        m_hi = 0.5 * (_shift(mp, a, 1, -1) + _shift(mp, a, 2, 0))
        m_lo = 0.5 * (_shift(mp, a, 1, -1) + _shift(mp, a, 0, -2))
        out += (m_hi * (_shift(mup, a, 2, 0) - _shift(mup, a, 1, -1))
                - m_lo * (_shift(mup, a, 1, -1) - _shift(mup, a, 0, -2))) / h**2
    return out


def gradient(f: Array, grid: Grid, bc: BoundaryCondition = NEUMANN, t: float = 0.0) -> tuple[Array, ...]:
    """Centred second-order gradient, one component per axis."""
    fp = pad(f, grid, bc, t)
    return tuple(
        (_shift(fp, a, 2, 0) - _shift(fp, a, 0, -2)) / (2.0 * h) for a, h in enumerate(grid.spacing)
    )


def divergence(components: Sequence[Array], grid: Grid, bc: BoundaryCondition = NEUMANN, t: float = 0.0) -> Array:
    """Centred divergence of a cell-centred vector field."""
    if len(components) != grid.dims:
        raise GridError(f"vector field has {len(components)} components, grid is {grid.dims}D")
    out = np.zeros(grid.shape)
    for a, (c, h) in enumerate(zip(components, grid.spacing)):
        cp = pad(c, grid, bc, t)
        out += (_shift(cp, a, 2, 0) - _shift(cp, a, 0, -2)) / (2.0 * h)
    return out


# -- sparse assembly ---------------------------------------------------------


def _flat(grid: Grid) -> Array:
    return np.arange(grid.size).reshape(grid.shape)


def mobility_matrix(m: Array, grid: Grid) -> sp.csr_matrix:
    """Sparse matrix of ``mu -> div(m grad mu)`` with zero-flux boundaries."""
    m = check_field(m, grid, "mobility")
    idx = _flat(grid)
    rows, cols, vals = [], [], []
    diag = np.zeros(grid.size)
    for a, h in enumerate(grid.spacing):
        mf = face_mobility(m, grid, a) / h**2
        lo = [slice(None)] * grid.dims
        hi = [slice(None)] * grid.dims
        lo[a], hi[a] = slice(None, -1), slice(1, None)
        i0 = idx[tuple(lo)].ravel()
        i1 = idx[tuple(hi)].ravel()
        c = mf.ravel()
        rows += [i0, i1]
        cols += [i1, i0]
        vals += [c, c]
        np.add.at(diag, i0, -c)
        np.add.at(diag, i1, -c)
    rows.append(np.arange(grid.size))
    cols.append(np.arange(grid.size))
    vals.append(diag)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.size, grid.size)
    )


def laplacian_matrix(grid: Grid, bc: BoundaryCondition = NEUMANN) -> sp.csr_matrix:
    """Sparse Laplacian.  For Dirichlet ``bc`` only the homogeneous part is
    returned; add :func:`dirichlet_lift` for the boundary value."""
    L = mobility_matrix(np.ones(grid.shape), grid)
    if bc.kind == "dirichlet":
        L = L - sp.diags(_boundary_face_count(grid).ravel() * 2.0)
    return L.tocsr()


def _boundary_face_count(grid: Grid) -> Array:
    """Per cell, sum over boundary faces of ``1/h^2``."""
    out = np.zeros(grid.shape)
    for a, h in enumerate(grid.spacing):
        lo = [slice(None)] * grid.dims
        hi = [slice(None)] * grid.dims
        lo[a], hi[a] = 0, -1
        out[tuple(lo)] += 1.0 / h**2
        out[tuple(hi)] += 1.0 / h**2
    return out


def dirichlet_lift(grid: Grid, bc: BoundaryCondition, t: float = 0.0) -> Array:
    """Boundary contribution such that ``laplacian = L @ f + lift``."""
    if bc.kind != "dirichlet":
        return np.zeros(grid.shape)
    return 2.0 * bc.at(t) * _boundary_face_count(grid)

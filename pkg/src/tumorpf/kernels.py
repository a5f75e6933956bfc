"""Nonlocal operators: scalar cell-cell adhesion kernels and the odd vector
kernel used for nonlocal haptotaxis.

Convolutions are direct sums over the kernel footprint.  The footprint is
truncated at the domain boundary (only cells inside the domain contribute).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import NEUMANN, Grid, GridError, check_field, gradient

Array = np.ndarray

# Weight that normalizes the trace of the 2D moment tensor to one.
TRACE_OMEGA_2D = 3.0 / 8.0


class KernelError(ValueError):
    pass


def _shifted_sum(f: Array, offsets: list[tuple[int, ...]], weights: list[float]) -> Array:
    """``out[i] = sum_d w_d f[i + d]`` with zero contribution from outside."""
    out = np.zeros_like(f, dtype=float)
    shape = f.shape
    for d, w in zip(offsets, weights):
        if w == 0.0:
            continue
        dst, src = [], []
        skip = False
        for n, k in zip(shape, d):
            if abs(k) >= n:
                skip = True
                break
            if k >= 0:
                dst.append(slice(0, n - k))
                src.append(slice(k, n))
            else:
                dst.append(slice(-k, n))
                src.append(slice(0, n + k))
        if not skip:
            out[tuple(dst)] += w * f[tuple(src)]
    return out


@dataclass(frozen=True)
class ScalarKernel:
    """Even kernel ``J(r)`` of the displacement vector with compact support.

    ``J`` receives the displacement components as arrays (one per axis).
    """

    J: Callable[..., Array]
    radius: float

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise KernelError("kernel radius must be finite and > 0")
        rng = np.random.default_rng(0)
        for dims in (1, 2):
            x = rng.uniform(-self.radius, self.radius, size=(dims, 16))
            a = np.asarray(self.J(*x), dtype=float)
            b = np.asarray(self.J(*(-x)), dtype=float)
            if not np.allclose(a, b, rtol=1e-12, atol=0.0):
                raise KernelError("scalar kernel must satisfy J(-x) = J(x)")

    def stencil(self, grid: Grid) -> tuple[list[tuple[int, ...]], list[float]]:
        """Offsets and midpoint weights ``J(d h) h^d`` inside the support."""
        _check_support(self.radius, grid)
        reach = [int(np.floor(self.radius / h)) for h in grid.spacing]
        axes = [np.arange(-r, r + 1) for r in reach]
        idx = np.meshgrid(*axes, indexing="ij")
        disp = [i * h for i, h in zip(idx, grid.spacing)]
        inside = sum(x**2 for x in disp) <= self.radius**2 * (1 + 1e-12)
        vals = np.where(inside, np.asarray(self.J(*disp), dtype=float) * grid.cell_volume, 0.0)
        offsets = [tuple(int(i[k]) for i in idx) for k in np.ndindex(vals.shape)]
        return offsets, [float(vals[k]) for k in np.ndindex(vals.shape)]


def gaussian_kernel(strength: float = 1.0, width: float = 0.05, radius: float | None = None) -> ScalarKernel:
    """Truncated Gaussian ``strength * exp(-|x|^2 / (2 width^2))``; the
    support radius defaults to three widths."""
    if width <= 0 or strength < 0:
        raise KernelError("gaussian kernel needs width > 0 and strength >= 0")
    radius = 3.0 * width if radius is None else radius

    def J(*x):
        r2 = sum(np.asarray(c, dtype=float) ** 2 for c in x)
        return strength * np.exp(-0.5 * r2 / width**2)

    return ScalarKernel(J, radius)


def box_kernel(strength: float, radius: float) -> ScalarKernel:
    def J(*x):
        return np.full(np.broadcast(*x).shape, float(strength))

    return ScalarKernel(J, radius)


def _check_support(radius: float, grid: Grid):
    if any(radius > L for L in grid.extents):
        raise KernelError(f"kernel support {radius} exceeds the domain {grid.extents}")


def convolve_scalar(f: Array, kern: ScalarKernel, grid: Grid) -> Array:
    """``(J * f)(x_i) = sum_j J(x_i - x_j) f_j h^d`` over cells of the domain."""
    f = check_field(f, grid)
    offsets, weights = kern.stencil(grid)
    return _shifted_sum(f, offsets, weights)


def adhesion_potential_term(phi_T: Array, kern: ScalarKernel, grid: Grid) -> Array:
    """Cell-cell adhesion contribution ``phi (J*1) - J*phi``."""
    ones = np.ones(grid.shape)
    return phi_T * convolve_scalar(ones, kern, grid) - convolve_scalar(phi_T, kern, grid)


@dataclass(frozen=True)
class VectorKernel:
    """Odd kernel ``k(x) = -omega x`` on the square ``|x|_inf <= eps``.

    ``omega = omega_scale * eps**-4``; the default scale 3/4 makes the moment
    tensor ``int x (x) k(-x) dx`` the identity in 2D.
    """

    eps: float
    omega_scale: float = 0.75

    def __post_init__(self):
        if not np.isfinite(self.eps) or self.eps <= 0:
            raise KernelError("interaction radius eps must be finite and > 0")
        if not np.isfinite(self.omega_scale) or self.omega_scale <= 0:
            raise KernelError("omega scale must be > 0")

    @property
    def omega(self) -> float:
        return self.omega_scale * self.eps**-4

    def __call__(self, *x):
        x = [np.asarray(c, dtype=float) for c in x]
        inside = np.maximum.reduce([np.abs(c) for c in x]) <= self.eps
        return [np.where(inside, -self.omega * c, 0.0) for c in x]


def _overlap_moments(eps: float, h: float) -> tuple[Array, Array, Array]:
    """Per 1D cell offset ``d``: overlap length and first moment of
    ``[(d-1/2)h, (d+1/2)h]`` with ``[-eps, eps]``."""
    reach = int(np.ceil(eps / h - 0.5))
    d = np.arange(-reach, reach + 1)
    lo = np.maximum((d - 0.5) * h, -eps)
    hi = np.minimum((d + 0.5) * h, eps)
    hi = np.maximum(hi, lo)
    return d, hi - lo, 0.5 * (hi**2 - lo**2)


def _convolve_1d(f: Array, axis: int, offsets: Array, weights: Array) -> Array:
    offs = []
    for k in offsets:
        o = [0] * f.ndim
        o[axis] = int(k)
        offs.append(tuple(o))
    return _shifted_sum(f, offs, list(weights))


def convolve_vector(f: Array, kern: VectorKernel, grid: Grid) -> list[Array]:
    """``k_eps * f`` with exact overlap integrals of the piecewise-constant
    field, truncated at the boundary."""
    f = check_field(f, grid)
    if grid.dims != 2:
        raise GridError("nonlocal haptotaxis is implemented in 2D only")
    if kern.eps > 0.5 * min(grid.extents):
        raise KernelError(f"eps={kern.eps} exceeds half the domain")
    factors = [_overlap_moments(kern.eps, h) for h in grid.spacing]
    out = []
    for a in range(2):
        g = f
        for b in range(2):
            d, length, moment = factors[b]
            g = _convolve_1d(g, b, d, moment if b == a else length)
        out.append(kern.omega * g)
    return out


def moment_correction(kern: VectorKernel, grid: Grid) -> list[float]:
    """Per axis, the ratio of the discrete moment ``sum_d x_d w_d`` of the
    overlap weights to the continuous ``int x^2 dx = 4 eps^4 / 3``.

    Sampling a field at cell centres biases the second moment of the
    footprint by ``O(h^2 / eps^2)``, so the raw convolution of a linear field
    misses its gradient by that relative amount; dividing by this ratio
    removes the bias and tends to one as ``h / eps -> 0``.
    """
    factors = [_overlap_moments(kern.eps, h) for h in grid.spacing]
    exact = 4.0 * kern.eps**4 / 3.0
    out = []
    for a in range(grid.dims):
        d, _, moment = factors[a]
        m = float(np.sum(moment * d * grid.spacing[a]))
        for b in range(grid.dims):
            if b != a:
                m *= float(np.sum(factors[b][1]))
        if m <= 0:
            raise KernelError(f"eps={kern.eps} reaches no neighbouring cell (h={grid.spacing[a]})")
        out.append(m / exact)
    return out


def nonlocal_gradient(f: Array, kern: VectorKernel, grid: Grid) -> list[Array]:
    """``k_eps * f`` with the sampling bias removed (see :func:`moment_correction`),
    so a linear field gives ``(omega_scale / 0.75) grad f`` at interior cells."""
    return [c / m for c, m in zip(convolve_vector(f, kern, grid), moment_correction(kern, grid))]


def haptotaxis_flux(
    phi_V: Array,
    phi_ECM: Array,
    grid: Grid,
    chi_h: float,
    mode: str = "local",
    kern: VectorKernel | None = None,
) -> list[Array]:
    """Cell-centred ``chi_h phi_V grad(ECM)`` (local) or ``chi_h phi_V (k*ECM)``
    with the bias-corrected convolution (nonlocal)."""
    if mode == "local":
        g = gradient(phi_ECM, grid, NEUMANN)
    elif mode == "nonlocal":
        if kern is None:
            raise KernelError("nonlocal haptotaxis needs a vector kernel")
        g = nonlocal_gradient(phi_ECM, kern, grid)
    else:
        raise KernelError(f"unknown haptotaxis mode {mode!r}")
    return [chi_h * phi_V * c for c in g]


def dirac_moments(kern: VectorKernel, quad_cells: int = 256) -> Array:
    """Midpoint quadrature of ``int x_i k_j(-x) dx`` over the 2D support."""
    if quad_cells < 64:
        raise KernelError("need at least 64 quadrature cells per axis")
    h = 2.0 * kern.eps / quad_cells
    s = -kern.eps + h * (np.arange(quad_cells) + 0.5)
    X, Y = np.meshgrid(s, s, indexing="ij")
    kx, ky = kern(-X, -Y)
    M = np.empty((2, 2))
    for i, xi in enumerate((X, Y)):
        for j, kj in enumerate((kx, ky)):
            M[i, j] = np.sum(xi * kj) * h * h
    return M


def dirac_normalization(kern: VectorKernel, quad_cells: int = 256) -> float:
    """The ``xx`` entry of :func:`dirac_moments` (equal to ``yy`` by symmetry)."""
    return float(dirac_moments(kern, quad_cells)[0, 0])

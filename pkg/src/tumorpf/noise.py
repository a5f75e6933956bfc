"""Interface-localized additive noise from a truncated cosine expansion.

Increments are ``sum_{i+j<I} eta_ij e_ij(x)`` with ``eta_ij ~ N(0, dt)`` and
``e_ij`` the L2-normalized cosine modes on the grid's rectangle.  Mode
indices start at 0 so ``I = 1`` is the constant mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridError
from .sources import smooth_switch

Array = np.ndarray


@dataclass(frozen=True)
class NoiseSpec:
    omega: float = 0.0
    phi_cut: float = 0.05
    trunc: int = 8
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.omega) or self.omega < 0:
            raise ValueError("noise intensity must be finite and >= 0")
        if not 0 < self.phi_cut < 0.5:
            raise ValueError("interface threshold must lie in (0, 0.5)")
        if int(self.trunc) != self.trunc or self.trunc < 1:
            raise ValueError("truncation level must be an integer >= 1")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an integer in [0, 2**64)")


def interface_gate(phi: Array, spec: NoiseSpec) -> Array:
    """``omega * H((phi - c)(1 - phi - c))``: ``omega`` inside the band."""
    c = spec.phi_cut
    return spec.omega * smooth_switch((phi - c) * (1.0 - phi - c))


def mode_indices(grid: Grid, trunc: int) -> list[tuple[int, ...]]:
    """All multi-indices with non-negative entries summing to less than ``trunc``."""
    if grid.dims == 1:
        return [(i,) for i in range(trunc)]
    return [(i, j) for i in range(trunc) for j in range(trunc - i)]


def cosine_mode(grid: Grid, index: tuple[int, ...]) -> Array:
    """``prod_a cos(i_a pi x_a / L_a)`` scaled to unit L2 norm on the domain."""
    out = np.ones(grid.shape)
    for a, i in enumerate(index):
        x = grid.axis_centers(a)
        L = grid.extents[a]
        factor = np.sqrt((1.0 if i == 0 else 2.0) / L) * np.cos(i * np.pi * x / L)
        shape = [1] * grid.dims
        shape[a] = -1
        out = out * factor.reshape(shape)
    return out


def mode_basis(grid: Grid, trunc: int) -> Array:
    """Stacked modes, shape ``(n_modes, *grid.shape)``."""
    top = trunc - 1
    if any(top > n for n in grid.cells):
        raise GridError(f"truncation level {trunc} exceeds the grid resolution")
    return np.stack([cosine_mode(grid, ix) for ix in mode_indices(grid, trunc)])


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, step)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(step)])))


def wiener_coefficients(n_modes: int, dt: float, rng: np.random.Generator) -> Array:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    return rng.standard_normal(n_modes) * np.sqrt(dt)


def wiener_increment(grid: Grid, spec: NoiseSpec, dt: float, rng: np.random.Generator, basis: Array | None = None) -> Array:
    """One Wiener increment field; pass ``basis`` to reuse the modes."""
    if basis is None:
        basis = mode_basis(grid, spec.trunc)
    eta = wiener_coefficients(basis.shape[0], dt, rng)
    return np.tensordot(eta, basis, axes=1)


def apply_noise(phi: Array, gate: Array, dW: Array) -> Array:
    phi, gate, dW = (np.asarray(a, dtype=float) for a in (phi, gate, dW))
    if not phi.shape == gate.shape == dW.shape:
        raise GridError(f"shape mismatch: {phi.shape}, {gate.shape}, {dW.shape}")
    return phi + gate * dW

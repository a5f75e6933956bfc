from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorpf.grid import (
    NEUMANN,
    Grid,
    GridError,
    dirichlet,
    dirichlet_lift,
    div_mobility_grad,
    divergence,
    gradient,
    laplacian,
    laplacian_matrix,
    mobility_matrix,
)


@pytest.fixture
def g2():
    return Grid((1.0, 1.0), (16, 16))


def test_grid_geometry():
    g = Grid((2.0, 1.0), (8, 4))
    assert g.spacing == (0.25, 0.25)
    assert g.volume == 2.0
    X, Y = g.centers()
    assert X[0, 0] == 0.125 and Y[0, -1] == 0.875
    # centres tile the domain
    assert np.isclose(g.integrate(np.ones(g.shape)), g.volume)


@pytest.mark.parametrize("ext,cells", [((1.0,), (3,)), ((1.0, 1.0), (8,)), ((0.0,), (8,)), ((1, 1, 1), (4, 4, 4))])
def test_grid_rejects_bad_shapes(ext, cells):
    with pytest.raises(GridError):
        Grid(ext, cells)


def test_laplacian_of_constant_is_zero(g2):
    assert np.all(laplacian(np.full(g2.shape, 3.0), g2) == 0.0)
    # Dirichlet with the matching boundary value
    assert np.allclose(laplacian(np.full(g2.shape, 3.0), g2, dirichlet(3.0)), 0.0, atol=1e-9)


def test_laplacian_rejects_nan(g2):
    f = np.zeros(g2.shape)
    f[2, 3] = np.nan
    with pytest.raises(GridError, match="non-finite"):
        laplacian(f, g2)


def test_laplacian_exact_for_quadratic_interior(g2):
    X, Y = g2.centers()
    out = laplacian(X**2 + Y**2, g2)
    assert np.allclose(out[1:-1, 1:-1], 4.0, rtol=0, atol=1e-9)


def test_laplacian_second_order_on_sine():
    errs = []
    for n in (16, 32, 64):
        g = Grid((1.0, 1.0), (n, n))
        X, Y = g.centers()
        f = np.sin(np.pi * X) * np.sin(np.pi * Y)
        out = laplacian(f, g, dirichlet(0.0))
        errs.append(np.max(np.abs(out + 2 * np.pi**2 * f)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), orders


def test_laplacian_matrix_matches_stencil(g2):
    rng = np.random.default_rng(1)
    f = rng.random(g2.shape)
    for bc in (NEUMANN, dirichlet(0.7)):
        L = laplacian_matrix(g2, bc)
        via = (L @ f.ravel()).reshape(g2.shape) + dirichlet_lift(g2, bc)
        assert np.allclose(via, laplacian(f, g2, bc), atol=1e-9)


def test_div_mobility_grad_zero_mobility(g2):
    mu = np.random.default_rng(0).random(g2.shape)
    assert np.all(div_mobility_grad(np.zeros(g2.shape), mu, g2) == 0.0)


@pytest.mark.parametrize("bc", [NEUMANN, dirichlet(0.3)])
def test_div_mobility_grad_unit_mobility_is_laplacian(g2, bc):
    mu = np.random.default_rng(2).random(g2.shape)
    assert np.allclose(div_mobility_grad(np.ones(g2.shape), mu, g2, bc), laplacian(mu, g2, bc), atol=1e-10)


def test_div_mobility_grad_rejects_negative(g2):
    m = np.ones(g2.shape)
    m[0, 0] = -1e-3
    with pytest.raises(GridError, match="non-negative"):
        div_mobility_grad(m, m, g2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(8,), (4, 9), (12, 7)]))
def test_div_mobility_grad_telescopes(seed, cells):
    g = Grid(tuple(1.0 for _ in cells), cells)
    rng = np.random.default_rng(seed)
    m, mu = rng.random(g.shape), rng.random(g.shape)
    out = div_mobility_grad(m, mu, g)
    assert abs(np.sum(out) * g.cell_volume) <= 1e-12 * max(1.0, np.max(np.abs(out)))


def test_mobility_matrix_matches_operator(g2):
    rng = np.random.default_rng(3)
    m, mu = rng.random(g2.shape), rng.random(g2.shape)
    A = mobility_matrix(m, g2)
    assert np.allclose((A @ mu.ravel()).reshape(g2.shape), div_mobility_grad(m, mu, g2), atol=1e-10)
    assert abs(A - A.T).max() < 1e-12


def test_gradient_and_divergence_of_constants(g2):
    assert all(np.all(c == 0) for c in gradient(np.full(g2.shape, 2.0), g2))
    assert np.all(divergence([np.full(g2.shape, 1.5), np.full(g2.shape, -2.0)], g2) == 0)


def test_gradient_exact_for_bilinear(g2):
    X, Y = g2.centers()
    gx, gy = gradient(X * Y, g2)
    assert np.allclose(gx[1:-1, 1:-1], Y[1:-1, 1:-1], atol=1e-12)
    assert np.allclose(gy[1:-1, 1:-1], X[1:-1, 1:-1], atol=1e-12)


def test_divergence_dimension_mismatch(g2):
    with pytest.raises(GridError, match="components"):
        divergence([np.zeros(g2.shape)], g2)


def test_div_grad_consistent_with_laplacian():
    # interior cells away from the boundary ghosts
    errs = []
    for n in (16, 32, 64):
        g = Grid((1.0, 1.0), (n, n))
        X, Y = g.centers()
        f = np.cos(np.pi * X) * np.cos(2 * np.pi * Y)
        d = divergence(list(gradient(f, g)), g)
        k = n // 4
        errs.append(np.max(np.abs(d - laplacian(f, g))[k:-k, k:-k]))
    assert errs[1] < errs[0] / 3 and errs[2] < errs[1] / 3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_operators_linear(seed, a, b):
    g = Grid((1.0, 2.0), (6, 8))
    rng = np.random.default_rng(seed)
    f, h, m = rng.random(g.shape), rng.random(g.shape), rng.random(g.shape)
    lhs = laplacian(a * f + b * h, g)
    assert np.allclose(lhs, a * laplacian(f, g) + b * laplacian(h, g), atol=1e-9)
    lhs = div_mobility_grad(m, a * f + b * h, g)
    assert np.allclose(lhs, a * div_mobility_grad(m, f, g) + b * div_mobility_grad(m, h, g), atol=1e-9)


def test_time_dependent_dirichlet():
    g = Grid((1.0,), (8,))
    bc = dirichlet(lambda t: 2.0 * t)
    assert bc.at(1.5) == 3.0
    out = laplacian(np.zeros(g.shape), g, bc, t=0.5)
    h = g.spacing[0]
    assert np.isclose(out[0], 2.0 / h**2) and np.isclose(out[-1], 2.0 / h**2)

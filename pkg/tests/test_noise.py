from __future__ import annotations

import numpy as np
import pytest

from tumorpf.grid import Grid, GridError
from tumorpf.noise import (
    NoiseSpec,
    apply_noise,
    cosine_mode,
    interface_gate,
    mode_basis,
    mode_indices,
    step_rng,
    wiener_coefficients,
    wiener_increment,
)

G = Grid((2.0, 1.0), (24, 12))


@pytest.mark.parametrize("phi,expected", [(0.5, 0.3), (0.0, 0.0), (1.0, 0.0), (0.01, 0.0), (0.97, 0.0), (0.2, 0.3)])
def test_gate_values(phi, expected):
    assert interface_gate(np.array(phi), NoiseSpec(omega=0.3)) == expected


def test_single_mode_is_constant():
    b = mode_basis(G, 1)
    assert b.shape == (1, *G.shape)
    assert np.allclose(b[0], 1 / np.sqrt(G.volume), rtol=1e-15)


def test_mode_count():
    assert len(mode_indices(G, 4)) == 10
    assert len(mode_indices(Grid((1.0,), (8,)), 4)) == 4


def test_modes_orthonormal():
    B = mode_basis(G, 6).reshape(-1, G.size)
    gram = B @ B.T * G.cell_volume
    assert np.max(np.abs(gram - np.eye(len(gram)))) < 1e-10


def test_mode_parity():
    # even index: symmetric about the midline, odd index: antisymmetric
    e = cosine_mode(G, (2, 1))
    assert np.allclose(e, e[::-1, :], atol=1e-12)
    assert np.allclose(e, -e[:, ::-1], atol=1e-12)


def test_truncation_above_resolution_rejected():
    with pytest.raises(GridError):
        mode_basis(Grid((1.0, 1.0), (4, 4)), 6)


def test_increment_statistics():
    dt, n = 0.01, 10000
    eta = np.stack([wiener_coefficients(3, dt, step_rng(7, k)) for k in range(n)])
    assert abs(eta.mean()) < 4 * np.sqrt(dt / eta.size)
    assert eta.var() == pytest.approx(dt, rel=0.05)
    # consecutive steps are uncorrelated
    lag = np.corrcoef(eta[:-1, 0], eta[1:, 0])[0, 1]
    assert abs(lag) < 4 / np.sqrt(n)


@pytest.mark.parametrize("dt", [1e-4, 1e-2, 1.0])
def test_variance_scales_with_dt(dt):
    eta = np.concatenate([wiener_coefficients(10, dt, step_rng(1, k)) for k in range(2000)])
    assert eta.var() / dt == pytest.approx(1.0, rel=0.05)


def test_seed_determinism():
    spec = NoiseSpec(omega=1.0, trunc=5, seed=11)
    a = wiener_increment(G, spec, 0.01, step_rng(11, 3))
    b = wiener_increment(G, spec, 0.01, step_rng(11, 3))
    c = wiener_increment(G, spec, 0.01, step_rng(12, 3))
    d = wiener_increment(G, spec, 0.01, step_rng(11, 4))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_doubling_omega_doubles_perturbation():
    phi = np.random.default_rng(0).uniform(0.2, 0.8, G.shape)
    dW = wiener_increment(G, NoiseSpec(trunc=4), 0.01, step_rng(0, 0))
    d1 = apply_noise(phi, interface_gate(phi, NoiseSpec(omega=0.1)), dW) - phi
    d2 = apply_noise(phi, interface_gate(phi, NoiseSpec(omega=0.2)), dW) - phi
    assert np.allclose(d2, 2 * d1, rtol=1e-12, atol=1e-16)


def test_zero_omega_is_exact_identity():
    phi = np.random.default_rng(1).random(G.shape)
    dW = wiener_increment(G, NoiseSpec(trunc=4), 0.01, step_rng(0, 0))
    assert np.array_equal(apply_noise(phi, interface_gate(phi, NoiseSpec()), dW), phi)


def test_apply_noise_shape_mismatch():
    with pytest.raises(GridError, match="shape"):
        apply_noise(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 5)))


@pytest.mark.parametrize("kw", [{"omega": -1.0}, {"phi_cut": 0.5}, {"trunc": 0}, {"trunc": 2.5}, {"seed": -1}])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        NoiseSpec(**kw)


def test_nonpositive_dt_rejected():
    with pytest.raises(ValueError):
        wiener_coefficients(3, 0.0, step_rng(0, 0))


def test_averaged_increment_variance_linear_in_dt():
    g = Grid((1.0, 1.0), (8, 8))
    spec = NoiseSpec(trunc=3)
    basis = mode_basis(g, 3)
    dts = np.array([1e-3, 1e-2, 1e-1])
    var = []
    for dt in dts:
        means = [g.integrate(wiener_increment(g, spec, dt, step_rng(5, k), basis)) / g.volume for k in range(10000)]
        var.append(np.var(means))
    slope = np.polyfit(np.log(dts), np.log(var), 1)[0]
    assert slope == pytest.approx(1.0, rel=0.1)

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorpf.grid import Grid
from tumorpf.potentials import (
    AdhesionSpec,
    EnergyParams,
    LandauWell,
    MissingFieldError,
    PotentialSpec,
    chemical_potentials,
    psi,
    psi_split,
    total_energy,
)

PHI = np.linspace(-0.25, 1.25, 601)


@pytest.mark.parametrize("phi,expected", [(0.0, 0.0), (1.0, 0.0), (0.5, 0.015625)])
def test_psi_single_well_values(phi, expected):
    assert psi(phi, PotentialSpec()) == pytest.approx(expected, abs=1e-16)


def test_psi_per_species_pure_phase():
    spec = PotentialSpec("per-species", (1.0, 2.0, 3.0))
    assert psi([1.0, 0.0, 0.0], spec) == 0.0


def test_convex_part_example_theta_one():
    cvx, _ = psi_split(PotentialSpec(theta=1.0))
    assert cvx.value(0.5) == pytest.approx(0.140625, abs=1e-15)


@pytest.mark.parametrize("theta", [1.0, 1.25, 2.0])
@pytest.mark.parametrize("scale", [1.0, 4.0])
def test_split_sums_to_well(theta, scale):
    w = LandauWell(scale, theta)
    assert np.max(np.abs(w.convex(PHI) + w.expansive(PHI) - w(PHI))) <= 1e-14 * scale
    assert np.max(np.abs(w.convex_d1(PHI) + w.expansive_d1(PHI) - w.d1(PHI))) <= 1e-13 * scale


def test_split_convexity_on_admissible_range():
    w = LandauWell(1.0, 1.25)
    assert np.all(w.convex_d2(PHI) > 0)
    assert np.all(w.expansive_d2(PHI) <= 1e-15)


def test_theta_one_is_not_concave_below_minus_one_sixth():
    # the reason for the 1.25 default
    w = LandauWell(1.0, 1.0)
    assert w.expansive_d2(-0.2) > 0


def test_derivatives_match_finite_differences():
    w = LandauWell(3.0)
    h = 1e-6
    x = np.linspace(-0.2, 1.2, 15)
    assert np.allclose((w(x + h) - w(x - h)) / (2 * h), w.d1(x), atol=1e-8)
    assert np.allclose((w.d1(x + h) - w.d1(x - h)) / (2 * h), w.d2(x), atol=1e-7)


def test_well_nonnegative_and_zero_only_at_pure_phases():
    v = LandauWell()(PHI)
    assert np.all(v >= 0)
    zeros = PHI[v == 0]
    assert set(np.round(zeros, 12)) <= {0.0, 1.0}


def test_potential_spec_rejects_nonpositive_prefactor():
    with pytest.raises(ValueError):
        PotentialSpec(prefactors=(1.0, 0.0))
    with pytest.raises(ValueError):
        PotentialSpec(form="log")


def _four(g, T, s):
    return {"T": np.full(g.shape, T), "sigma": np.full(g.shape, s)}


def test_chemical_potential_vanishes_at_half():
    g = Grid((1.0, 1.0), (8, 8))
    mu = chemical_potentials(_four(g, 0.5, 0.0), g, "four-species", PotentialSpec(), EnergyParams({"T": 0.1}))
    assert np.all(mu["T"] == 0.0)


def test_chemotaxis_shifts_mu():
    g = Grid((1.0, 1.0), (8, 8))
    mu = chemical_potentials(_four(g, 0.5, 0.3), g, "four-species", PotentialSpec(), EnergyParams({"T": 0.1}), AdhesionSpec(chi_c=2.0))
    assert np.allclose(mu["T"], -0.6, atol=1e-15)


def test_chemical_potentials_missing_field():
    g = Grid((1.0,), (8,))
    with pytest.raises(MissingFieldError):
        chemical_potentials({"T": np.zeros(8)}, g, "four-species", PotentialSpec(), EnergyParams())


def test_energy_examples():
    g = Grid((2.0, 1.0), (8, 4))
    z = np.zeros(g.shape)
    ep = EnergyParams({"T": 0.05}, {"sigma": 0.7})
    assert total_energy({"T": z, "sigma": z}, g, "four-species", PotentialSpec(), ep) == 0.0
    assert total_energy({"T": z + 1.0, "sigma": z}, g, "four-species", PotentialSpec(), ep) == 0.0
    c = 0.4
    E = total_energy({"T": z, "sigma": z + c}, g, "four-species", PotentialSpec(), ep)
    assert E == pytest.approx(0.7 / 2 * c**2 * g.volume, rel=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mu_is_discrete_variational_derivative(seed):
    g = Grid((1.0, 1.0), (12, 10))
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.2, 0.8, g.shape)
    delta = rng.standard_normal(g.shape)
    spec, ep = PotentialSpec(prefactors=(2.0,)), EnergyParams({"phi": 0.07})
    mu = chemical_potentials({"phi": phi}, g, "prototype-CH", spec, ep)["phi"]
    h = 1e-5
    E = lambda f: total_energy({"phi": f}, g, "prototype-CH", spec, ep)  # noqa: E731
    fd = (E(phi + h * delta) - E(phi - h * delta)) / (2 * h)
    exact = np.sum(mu * delta) * g.cell_volume
    assert fd == pytest.approx(exact, rel=1e-6)


def test_stratified_single_well_of_sum():
    g = Grid((1.0,), (8,))
    z = np.zeros(8)
    st_ = {"P": z + 0.3, "H": z + 0.3, "N": z + 0.4, "sigma": z, "ECM": z, "MDE": z, "TAF": z}
    E = total_energy(st_, g, "stratified-ECM", PotentialSpec(), EnergyParams())
    assert E == 0.0  # P + H + N = 1 is a well bottom
    E2 = total_energy(st_, g, "stratified-ECM", PotentialSpec("per-species", (1.0,)), EnergyParams())
    assert E2 > 0

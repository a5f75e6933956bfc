from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorpf.sources import (
    STRATIFIED_FIELDS,
    RateParams,
    SwitchSpec,
    chemo_boundary,
    chemo_sources,
    four_species_sources,
    smooth_switch,
    stratified_sources,
)

HEAVI = SwitchSpec("heaviside")


@pytest.mark.parametrize("x,expected", [(-0.3, 0.0), (0.0, 0.5), (0.2, 1.0)])
def test_heaviside(x, expected):
    assert smooth_switch(x, HEAVI) == expected


@pytest.mark.parametrize("k", [0.1, 5.0, 1e6])
def test_sigmoid_midpoint(k):
    assert smooth_switch(0.0, SwitchSpec("sigmoid", k)) == 0.5


def test_sigmoid_no_overflow():
    v = smooth_switch(np.array([-1e3, 1e3]), SwitchSpec("sigmoid", 1e6))
    assert np.array_equal(v, [0.0, 1.0])


def test_four_species_examples():
    r = RateParams(lambda_pro_T=4.0, lambda_apo_T=1.0)
    assert four_species_sources(0.0, 0.7, r)[0] == 0.0
    assert four_species_sources(1.0, 0.7, RateParams(lambda_apo_T=0.0))[0] == 0.0
    S_T, S_s = four_species_sources(0.5, 1.0, r)
    assert S_T == pytest.approx(0.5, abs=1e-15)
    assert S_s == -S_T


def _random_state(rng, n):
    return {k: rng.random(n) for k in STRATIFIED_FIELDS}


def test_gates_closed_when_nutrient_is_high():
    rng = np.random.default_rng(0)
    st_ = _random_state(rng, 100)
    st_["sigma"] = rng.uniform(0.6, 1.0, 100)
    r = RateParams(lambda_pro_P=0, lambda_pro_H=0, lambda_apo_P=0, lambda_apo_H=0, lambda_HP=0)
    S = stratified_sources(st_, r, HEAVI)
    assert np.all(S["N"] == 0)
    # with proliferation and H->P off, S_P is exactly minus the P->H term
    assert np.all(S["P"] == 0)


def test_no_hypoxic_cells_no_necrosis_no_taf_release():
    rng = np.random.default_rng(1)
    st_ = _random_state(rng, 50)
    st_["H"] = np.zeros(50)
    r = RateParams(lambda_deg_TAF=0.0)
    S = stratified_sources(st_, r, HEAVI)
    assert np.all(S["N"] == 0) and np.all(S["TAF"] == 0)


def test_stratified_missing_field():
    with pytest.raises(KeyError, match="ECM"):
        stratified_sources({k: 0.0 for k in STRATIFIED_FIELDS if k != "ECM"}, RateParams())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["heaviside", "sigmoid"]))
def test_sign_structure(seed, mode):
    rng = np.random.default_rng(seed)
    st_ = _random_state(rng, 200)
    r = RateParams(**{k: float(rng.uniform(0, 3)) for k in ("lambda_HN", "lambda_pro_TAF", "lambda_deg_TAF")})
    S = stratified_sources(st_, r, SwitchSpec(mode, 20.0))
    assert np.all(S["N"] >= 0)
    assert np.all(S["TAF"] <= r.lambda_pro_TAF)
    assert all(np.all(np.isfinite(v)) for v in S.values())


def test_signals_are_not_balanced():
    rng = np.random.default_rng(5)
    S = stratified_sources(_random_state(rng, 100), RateParams())
    assert np.max(np.abs(S["MDE"] + S["TAF"])) > 1e-3


def test_sigmoid_converges_to_heaviside_off_threshold():
    rng = np.random.default_rng(7)
    st_ = _random_state(rng, 500)
    r = RateParams(lambda_pro_ECM=1.0)
    ref = stratified_sources(st_, r, HEAVI)
    # stay away from the threshold sets
    s, H, E = st_["sigma"], st_["H"], st_["ECM"]
    far = np.ones(500, bool)
    for thr in (r.sigma_PH, r.sigma_HP, r.sigma_HN):
        far &= np.abs(s - thr) > 0.02
    far &= np.abs(H - r.phi_pro_H) > 0.02
    far &= np.abs(E - r.phi_pro_ECM) > 0.02
    errs = []
    for k in (1e2, 1e3, 1e4):
        S = stratified_sources(st_, r, SwitchSpec("sigmoid", k))
        errs.append(max(np.max(np.abs(S[f] - ref[f])[far]) for f in STRATIFIED_FIELDS))
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-12


def test_chemo_examples():
    r = RateParams(lambda_kill_T=3.0, lambda_kill_CMT=2.0, lambda_deg_CMT=0.5, K_CMT=0.8)
    assert chemo_sources(0.4, 1.0, 0.0, r) == (0.0, 0.0)
    for T in (0.0, 1.0):
        dS, S = chemo_sources(T, 1.0, 0.6, r)
        assert dS == 0.0 and S == pytest.approx(-0.5 * 0.6)
    dS, _ = chemo_sources(0.5, 1.0, 0.8, r)
    assert dS == pytest.approx(-0.125 * 3.0, abs=1e-15)


def test_chemo_rejects_negative_drug():
    with pytest.raises(ValueError):
        chemo_sources(0.5, 1.0, -1e-9, RateParams())


@pytest.mark.parametrize(
    "t,expected",
    [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (math.nextafter(2.0, 3.0), 0.0), (6.0, 0.0), (7.0, 1.0), (8.0, 1.0),
     (12.0, 0.0), (13.0, 1.0), (14.0, 1.0), (14.0001, 0.0), (math.nextafter(14.0, 15.0), 0.0), (100.0, 0.0)],
)
def test_chemo_schedule(t, expected):
    assert chemo_boundary(t) == expected


def test_rate_validation():
    with pytest.raises(ValueError):
        RateParams(lambda_pro_T=-1.0)
    with pytest.raises(ValueError):
        RateParams(sigma_PH=1.5)
    with pytest.raises(ValueError):
        SwitchSpec("step")

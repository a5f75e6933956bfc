"""Reaction terms: four-species, stratified ECM/MDE/TAF and chemotherapy.

All maps are pointwise and accept scalars or arrays.  Inputs slightly outside
``[0, 1]`` are evaluated as-is (no clamping) so closed-subsystem balances
hold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class SwitchSpec:
    mode: str = "heaviside"
    steepness: float = 50.0

    def __post_init__(self):
        if self.mode not in ("heaviside", "sigmoid"):
            raise ValueError(f"unknown switch mode {self.mode!r}")
        if not np.isfinite(self.steepness) or self.steepness <= 0:
            raise ValueError("sigmoid steepness must be finite and > 0")


def smooth_switch(x, spec: SwitchSpec = SwitchSpec()):
    """Heaviside (value 1/2 at 0) or logistic ``1/(1+exp(-k x))``."""
    x = np.asarray(x, dtype=float)
    if spec.mode == "heaviside":
        out = np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))
    else:
        # tanh form avoids overflow of exp for large |k x|
        out = 0.5 * (1.0 + np.tanh(0.5 * spec.steepness * x))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RateParams:
    lambda_pro_T: float = 1.0
    lambda_apo_T: float = 0.0
    lambda_pro_P: float = 1.0
    lambda_apo_P: float = 0.0
    lambda_pro_H: float = 0.5
    lambda_apo_H: float = 0.0
    lambda_PH: float = 1.0
    lambda_HP: float = 1.0
    lambda_HN: float = 1.0
    sigma_PH: float = 0.4
    sigma_HP: float = 0.5
    sigma_HN: float = 0.2
    lambda_deg_ECM: float = 1.0
    lambda_pro_ECM: float = 0.0
    phi_pro_ECM: float = 0.5
    lambda_pro_MDE: float = 1.0
    lambda_deg_MDE: float = 1.0
    lambda_pro_TAF: float = 1.0
    lambda_deg_TAF: float = 0.1
    phi_pro_H: float = 0.1
    lambda_deg_CMT: float = 0.0
    lambda_kill_CMT: float = 0.0
    lambda_kill_T: float = 0.0
    K_CMT: float = 1.0

    _thresholds = ("sigma_PH", "sigma_HP", "sigma_HN", "phi_pro_ECM", "phi_pro_H")

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"rate parameter {f.name} must be finite and >= 0, got {v}")
        for name in self._thresholds:
            if getattr(self, name) > 1:
                raise ValueError(f"threshold {name} must lie in [0, 1]")
        if self.K_CMT <= 0:
            raise ValueError("K_CMT must be > 0")


def four_species_sources(phi_T, phi_sigma, rates: RateParams):
    """``S_T = l_pro sigma T (1-T) - l_apo T`` and ``S_sigma = -S_T``."""
    S_T = rates.lambda_pro_T * phi_sigma * phi_T * (1.0 - phi_T) - rates.lambda_apo_T * phi_T
    return S_T, -S_T


STRATIFIED_FIELDS = ("P", "H", "N", "sigma", "ECM", "MDE", "TAF")


def stratified_sources(
    state: Mapping[str, Array], rates: RateParams, switch: SwitchSpec = SwitchSpec()
) -> dict[str, Array]:
    """Sources of the stratified model keyed by species name."""
    missing = [k for k in STRATIFIED_FIELDS if k not in state]
    if missing:
        raise KeyError(f"stratified sources need field(s): {', '.join(missing)}")
    P, H, N, s, E, M, A = (np.asarray(state[k], dtype=float) for k in STRATIFIED_FIELDS)
    r = rates
    T = P + H + N
    H_ = lambda x: smooth_switch(x, switch)  # noqa: E731

    prolif_P = r.lambda_pro_P * s * P * (1.0 - T)
    prolif_H = r.lambda_pro_H * s * H * (1.0 - T)
    apo_P = r.lambda_apo_P * P
    apo_H = r.lambda_apo_H * H
    p_to_h = r.lambda_PH * H_(r.sigma_PH - s) * P
    h_to_p = r.lambda_HP * H_(s - r.sigma_HP) * H
    h_to_n = r.lambda_HN * H_(r.sigma_HN - s) * H
    ecm_deg = r.lambda_deg_ECM * E * M
    ecm_pro = r.lambda_pro_ECM * s * (1.0 - E) * H_(E - r.phi_pro_ECM)

    return {
        "P": prolif_P - apo_P - p_to_h + h_to_p,
        "H": prolif_H - apo_H + p_to_h - h_to_p - h_to_n,
        "N": h_to_n,
        "sigma": apo_P + apo_H - prolif_P - prolif_H + ecm_deg - ecm_pro,
        "ECM": -ecm_deg + ecm_pro,
        "MDE": r.lambda_pro_MDE * (P + H) * E * r.sigma_HP / (r.sigma_HP + s) * (1.0 - M)
        - r.lambda_deg_MDE * M
        - ecm_deg,
        "TAF": r.lambda_pro_TAF * (1.0 - A) * H * H_(H - r.phi_pro_H) - r.lambda_deg_TAF * A,
    }


def chemo_sources(phi_T, phi_sigma, phi_CMT, rates: RateParams):
    """Returns ``(dS_T, S_CMT)``: the killing term added to the tumor source
    and the drug source.  ``phi_sigma`` does not enter the printed terms."""
    phi_CMT = np.asarray(phi_CMT, dtype=float)
    if np.any(phi_CMT < 0):
        raise ValueError("chemotherapy concentration must be non-negative")
    sat = phi_T * (1.0 - phi_T) * phi_CMT / (rates.K_CMT + phi_CMT)
    dS_T = -rates.lambda_kill_T * sat
    S_CMT = -rates.lambda_deg_CMT * phi_CMT - rates.lambda_kill_CMT * sat
    return dS_T, S_CMT


CHEMO_WINDOWS = ((None, 2.0), (6.0, 8.0), (12.0, 14.0))


def chemo_boundary(t: float) -> float:
    """1 on ``t <= 2``, ``6 < t <= 8``, ``12 < t <= 14``; 0 otherwise."""
    if t < 0:
        raise ValueError("time must be >= 0")
    for lo, hi in CHEMO_WINDOWS:
        if (lo is None or t > lo) and t <= hi:
            return 1.0
    return 0.0

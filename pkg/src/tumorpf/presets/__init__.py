"""Built-in scenarios shipped as YAML files next to this module."""

from __future__ import annotations

from importlib import resources

NAMES = (
    "prototype-spinodal",
    "four-species-growth",
    "stratified-ecm",
    "nonlocal-haptotaxis-sweep",
    "fractional-sweep",
    "stochastic-sweep",
    "chemo-cycles",
    "vessel-coupling",
)


def preset_text(name: str) -> str:
    if name not in NAMES:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(NAMES)}")
    return resources.files(__name__).joinpath(f"{name}.yaml").read_text(encoding="utf-8")


def load_preset(name: str):
    from ..scenario import parse_scenario

    return parse_scenario(preset_text(name))

"""Parsing of the textual parameter forms shared by scene presets and the CLI."""

from __future__ import annotations

from .integrator import RenderConfig


def parse_alpha(text) -> float | str:
    """``"visits"`` or ``"const:F"`` (a bare number is accepted too)."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    s = str(text).strip()
    if s == "visits":
        return "visits"
    if s.startswith("const:"):
        s = s[len("const:"):]
    try:
        value = float(s)
    except ValueError:
        raise ValueError(f"alpha must be 'visits' or 'const:F', got {text!r}") from None
    if not 0.0 < value <= 1.0:
        raise ValueError(f"constant alpha must lie in (0, 1], got {value}")
    return value


def _ints(text, sep: str, count: int, what: str) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = str(text).lower().split(sep)
    try:
        values = tuple(int(p) for p in parts)
    except (TypeError, ValueError):
        raise ValueError(f"{what}: expected {count} integers, got {text!r}") from None
    if len(values) != count or min(values) < 1:
        raise ValueError(f"{what}: expected {count} positive integers, got {text!r}")
    return values


def parse_strata(text) -> tuple[int, int]:
    """``"BxS"``: polar bands times azimuthal sectors."""
    return _ints(text, "x", 2, "strata")


def parse_grid(text) -> tuple[int, int, int]:
    """``"NX,NY,NZ"``."""
    return _ints(text, ",", 3, "grid")


# preset key -> (RenderConfig field, parser)
_PRESET_KEYS = {
    "spp": ("iterations", int),
    "iterations": ("iterations", int),
    "probes": ("probe_count", int),
    "alpha": ("alpha", parse_alpha),
    "strata": ("strata", parse_strata),
    "grid": ("grid", parse_grid),
    "floor": ("floor", float),
    "max_depth": ("max_depth", int),
    "mode": ("mode", str),
}


def preset_overrides(preset: dict) -> dict:
    """``RenderConfig`` keyword arguments for a scene preset entry."""
    out = {}
    for key, value in preset.items():
        if key not in _PRESET_KEYS:
            raise ValueError(f"unknown preset key {key!r}")
        name, parse = _PRESET_KEYS[key]
        out[name] = parse(value)
    return out


def config_for(scene, preset: str | None = "default", **kwargs) -> RenderConfig:
    """Config from the scene's named preset (if it has one) with ``kwargs`` on top."""
    base = {}
    if preset is not None:
        if preset in scene.presets:
            base = preset_overrides(scene.presets[preset])
        elif preset != "default":
            raise ValueError(f"scene {scene.name!r} has no preset {preset!r}")
    base.update(kwargs)
    return RenderConfig(**base)

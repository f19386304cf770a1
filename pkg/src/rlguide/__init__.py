"""Progressive path tracing with reinforcement-learned path guiding.

Quick start::

    from rlguide import load_scene, resolve_scene, render, RenderConfig

    scene = load_scene(resolve_scene("door"))
    image, stats = render(scene, RenderConfig(mode="rl", iterations=64))
"""

from .diagnostics import compare_modes, ergodicity_sweep, rmse
from .guiding import HemisphereGrid, QField, place_probes
from .integrator import MODES, RenderConfig, RenderStats, render, trace_path
from .io import SceneError, load_scene, read_pfm, resolve_scene, save_scene, write_image
from .presets import config_for
from .scene import Camera, Scene
from .td_select import EnvTileGrid, LightSelectionGrid

__all__ = [
    "MODES",
    "Camera",
    "EnvTileGrid",
    "HemisphereGrid",
    "LightSelectionGrid",
    "QField",
    "RenderConfig",
    "RenderStats",
    "Scene",
    "SceneError",
    "compare_modes",
    "config_for",
    "ergodicity_sweep",
    "load_scene",
    "place_probes",
    "read_pfm",
    "render",
    "resolve_scene",
    "rmse",
    "save_scene",
    "trace_path",
    "write_image",
]

"""Immutable scene: camera, materials, primitives, lights and environment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import as_vec3, vcross, vdot, vnormalize, vsub
from .geometry import GeomArrays, Primitive, build_bvh, empty_bvh, pack_geometry
from .materials import AreaLight, EnvironmentLight, LightArrays, MatArrays, Material, pack_lights, pack_materials


class CameraArrays(NamedTuple):
    position: tuple
    forward: tuple
    right: tuple
    up: tuple
    half_w: float
    half_h: float


@dataclass(frozen=True)
class Camera:
    position: tuple = (0.0, 0.0, 5.0)
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov: float = 40.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            v = as_vec3(getattr(self, name))
            if not all(math.isfinite(c) for c in v):
                raise ValueError(f"camera {name} must be finite")
            object.__setattr__(self, name, v)
        if not 0.0 < self.fov < 180.0:
            raise ValueError(f"vertical fov must be in (0, 180) degrees, got {self.fov}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        fwd = vsub(self.look_at, self.position)
        if vdot(fwd, fwd) == 0.0 or vdot(vcross(fwd, self.up), vcross(fwd, self.up)) == 0.0:
            raise ValueError("camera look_at must differ from position and not be parallel to up")

    def arrays(self, width: int | None = None, height: int | None = None) -> CameraArrays:
        w = width or self.width
        h = height or self.height
        fwd = vnormalize(vsub(self.look_at, self.position))
        right = vnormalize(vcross(fwd, self.up))
        up = vcross(right, fwd)
        half_h = math.tan(math.radians(self.fov) * 0.5)
        return CameraArrays(self.position, fwd, right, up, half_h * w / h, half_h)


@dataclass
class Scene:
    """Scene description plus the packed arrays the kernels consume.

    Area lights are derived from primitives whose material emits.
    """

    camera: Camera
    materials: list[Material]
    primitives: list[Primitive]
    environment: EnvironmentLight | None = None
    presets: dict = field(default_factory=dict)
    name: str = "scene"

    def __post_init__(self):
        if not self.primitives and self.environment is None:
            raise ValueError("scene needs at least one primitive or an environment")
        if not self.materials:
            self.materials = [Material()]
        for i, p in enumerate(self.primitives):
            if not 0 <= p.material_id < len(self.materials):
                raise ValueError(f"primitive {i} references missing material {p.material_id}")
        self.lights = [
            AreaLight(i, self.materials[p.material_id].emission, p.area)
            for i, p in enumerate(self.primitives)
            if self.materials[p.material_id].is_emissive
        ]
        if self.primitives:
            self.bvh = build_bvh(self.primitives)
            lo, hi = self.bvh.bmin[0], self.bvh.bmax[0]
        else:
            self.bvh = empty_bvh()
            lo, hi = -np.ones(3), np.ones(3)
        self.bounds = (np.array(lo, dtype=np.float64), np.array(hi, dtype=np.float64))
        self.diagonal = float(np.linalg.norm(hi - lo)) or 1.0
        self.eps = 1e-4 * self.diagonal
        self.geom: GeomArrays = pack_geometry(self.primitives, self.bvh)
        self.mats: MatArrays = pack_materials(self.materials)
        self.light_arrays: LightArrays = pack_lights(self.lights)
        env = self.environment
        self.env_lattice = env.lattice if env is not None else np.zeros((1, 1, 3))
        self.areas = np.array([p.area for p in self.primitives], dtype=np.float64)

    @property
    def has_environment(self) -> bool:
        return self.environment is not None

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def material_of(self, prim: int) -> Material:
        return self.materials[self.primitives[prim].material_id]

"""BSDFs, emitted radiance, area-light sampling and the environment light.

Materials are Lambertian unless ``phong > 0``, in which case the lobe is the
energy-normalized Phong ``albedo * (e + 2) / (2 pi) * cos^e(alpha)`` around
the mirror direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .core import INV_PI, TWO_PI, Frame, as_vec3, cosine_sample_local, onb, to_world, vadd, vdot, vscale, vsub
from .geometry import QUAD, SPHERE, geometric_normal

BLACK = (0.0, 0.0, 0.0)


def _spectrum(value, what: str) -> tuple:
    c = as_vec3(value)
    if not all(math.isfinite(x) and x >= 0 for x in c):
        raise ValueError(f"{what} must be finite and non-negative, got {value!r}")
    return c


@dataclass(frozen=True)
class Material:
    albedo: tuple = (0.8, 0.8, 0.8)
    emission: tuple = BLACK
    phong: float = 0.0
    name: str = ""

    def __post_init__(self):
        albedo = _spectrum(self.albedo, "albedo")
        if max(albedo) > 1.0:
            raise ValueError(f"albedo must not exceed 1 (energy conservation), got {self.albedo!r}")
        object.__setattr__(self, "albedo", albedo)
        object.__setattr__(self, "emission", _spectrum(self.emission, "emission"))
        if not (self.phong >= 0 and math.isfinite(self.phong)):
            raise ValueError(f"phong exponent must be >= 0, got {self.phong}")

    @property
    def is_emissive(self) -> bool:
        return max(self.emission) > 0.0


@dataclass(frozen=True)
class AreaLight:
    primitive_id: int
    emission: tuple
    area: float


@dataclass
class EnvironmentLight:
    """Radiance over the sphere on an equal-solid-angle (phi, cos theta) lattice.

    ``lattice[row, col]``: row 0 is the band touching the +y pole; columns
    split phi = atan2(z, x) in [0, 2 pi). A constant sky is a 1x1 lattice.
    """

    lattice: np.ndarray
    constant: bool = field(default=False)

    def __post_init__(self):
        lat = np.array(self.lattice, dtype=np.float64)
        if lat.ndim != 3 or lat.shape[2] != 3 or lat.shape[0] < 1 or lat.shape[1] < 1:
            raise ValueError(f"environment lattice must have shape (H, W, 3), got {lat.shape}")
        if not np.all(np.isfinite(lat)) or np.any(lat < 0):
            raise ValueError("environment texels must be finite and non-negative")
        self.lattice = lat

    @classmethod
    def uniform(cls, rgb) -> "EnvironmentLight":
        return cls(np.array(_spectrum(rgb, "environment radiance")).reshape(1, 1, 3), constant=True)

    @property
    def resolution(self) -> tuple[int, int]:
        """``(width, height)`` of the lattice."""
        return self.lattice.shape[1], self.lattice.shape[0]

    def radiance(self, direction) -> tuple:
        return env_radiance(self.lattice, as_vec3(direction))


class MatArrays(NamedTuple):
    albedo: np.ndarray
    emission: np.ndarray
    phong: np.ndarray


class LightArrays(NamedTuple):
    prim: np.ndarray
    emission: np.ndarray
    area: np.ndarray


def pack_materials(materials: Sequence[Material]) -> MatArrays:
    return MatArrays(
        np.array([m.albedo for m in materials], dtype=np.float64).reshape(-1, 3),
        np.array([m.emission for m in materials], dtype=np.float64).reshape(-1, 3),
        np.array([m.phong for m in materials], dtype=np.float64),
    )


def pack_lights(lights: Sequence[AreaLight]) -> LightArrays:
    # a dummy row keeps array types stable for light-free scenes
    if not lights:
        return LightArrays(np.full(1, -1, dtype=np.int32), np.zeros((1, 3)), np.ones(1))
    return LightArrays(
        np.array([l.primitive_id for l in lights], dtype=np.int32),
        np.array([l.emission for l in lights], dtype=np.float64),
        np.array([l.area for l in lights], dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# compiled BSDF
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _reflect(wo, n):
    return vsub(vscale(n, 2.0 * vdot(wo, n)), wo)


@njit(cache=True, inline="always")
def bsdf_f(mats, m, wi, wo, n):
    """f_s(wi, wo) at a surface with (oriented) normal ``n``."""
    if vdot(wi, n) <= 0.0 or vdot(wo, n) <= 0.0:
        return BLACK
    e = mats.phong[m]
    if e > 0.0:
        c = vdot(wi, _reflect(wo, n))
        if c <= 0.0:
            return BLACK
        s = (e + 2.0) / TWO_PI * c**e
    else:
        s = INV_PI
    return (mats.albedo[m, 0] * s, mats.albedo[m, 1] * s, mats.albedo[m, 2] * s)


@njit(cache=True, inline="always")
def bsdf_pdf(mats, m, wi, wo, n):
    cos_i = vdot(wi, n)
    e = mats.phong[m]
    if e > 0.0:
        c = vdot(wi, _reflect(wo, n))
        if c <= 0.0:
            return 0.0
        return (e + 1.0) / TWO_PI * c**e
    if cos_i <= 0.0:
        return 0.0
    return cos_i * INV_PI


@njit(cache=True, inline="always")
def bsdf_sample_dir(mats, m, wo, n, u, v):
    """Sample wi: cosine-weighted (Lambertian) or around the mirror lobe (Phong).

    Returns ``(wi, pdf, f)``; ``f`` is black when a Phong sample lands below
    the surface.
    """
    e = mats.phong[m]
    if e > 0.0:
        r = _reflect(wo, n)
        t, b = onb(r)
        cos_a = u ** (1.0 / (e + 1.0))
        sin_a = math.sqrt(max(0.0, 1.0 - cos_a * cos_a))
        phi = TWO_PI * v
        wi = to_world(t, b, r, (sin_a * math.cos(phi), sin_a * math.sin(phi), cos_a))
        pdf = (e + 1.0) / TWO_PI * cos_a**e
    else:
        t, b = onb(n)
        local, pdf = cosine_sample_local(u, v)
        wi = to_world(t, b, n, local)
    return wi, pdf, bsdf_f(mats, m, wi, wo, n)


# ---------------------------------------------------------------------------
# emission and lights
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def emitted_radiance(mats, m, wo, ng):
    """One-sided emission along the geometric normal ``ng``."""
    if vdot(wo, ng) > 0.0:
        return (mats.emission[m, 0], mats.emission[m, 1], mats.emission[m, 2])
    return BLACK


@njit(cache=True, inline="always")
def env_radiance(lattice, d):
    h = lattice.shape[0]
    w = lattice.shape[1]
    if h == 1 and w == 1:
        return (lattice[0, 0, 0], lattice[0, 0, 1], lattice[0, 0, 2])
    phi = math.atan2(d[2], d[0])
    if phi < 0.0:
        phi += TWO_PI
    col = min(int(phi / TWO_PI * w), w - 1)
    row = min(max(int((1.0 - d[1]) * 0.5 * h), 0), h - 1)
    return (lattice[row, col, 0], lattice[row, col, 1], lattice[row, col, 2])


@njit(cache=True, inline="always")
def sample_point_on_primitive(g, prim, u, v):
    """Area-uniform point on a primitive; returns ``(point, geometric normal)``."""
    k = g.prim_type[prim]
    d = g.prim_data
    if k == SPHERE:
        z = 1.0 - 2.0 * u
        r = math.sqrt(max(0.0, 1.0 - z * z))
        phi = TWO_PI * v
        n = (r * math.cos(phi), r * math.sin(phi), z)
        p = (d[prim, 0] + d[prim, 3] * n[0], d[prim, 1] + d[prim, 3] * n[1], d[prim, 2] + d[prim, 3] * n[2])
        return p, n
    p0 = (d[prim, 0], d[prim, 1], d[prim, 2])
    if k == QUAD:
        p = vadd(p0, vadd(vscale((d[prim, 3], d[prim, 4], d[prim, 5]), u), vscale((d[prim, 6], d[prim, 7], d[prim, 8]), v)))
    else:
        su = math.sqrt(u)
        b0 = 1.0 - su
        b1 = v * su
        p1 = (d[prim, 3], d[prim, 4], d[prim, 5])
        p2 = (d[prim, 6], d[prim, 7], d[prim, 8])
        p = vadd(vadd(vscale(p0, b0), vscale(p1, b1)), vscale(p2, 1.0 - b0 - b1))
    return p, geometric_normal(g, prim, p)


# ---------------------------------------------------------------------------
# Python entry points
# ---------------------------------------------------------------------------


def _mats_for(material: Material) -> MatArrays:
    return pack_materials([material])


def bsdf_eval(material: Material, wi, wo, frame: Frame) -> tuple:
    return bsdf_f(_mats_for(material), 0, as_vec3(wi), as_vec3(wo), frame.normal)


def bsdf_sample(material: Material, wo, frame: Frame, u: float, v: float) -> tuple[tuple, float, tuple]:
    wi, pdf, f = bsdf_sample_dir(_mats_for(material), 0, as_vec3(wo), frame.normal, u, v)
    return wi, pdf, f


def emitted(source, wo, normal=None) -> tuple:
    """Radiance leaving ``source`` toward ``wo``.

    ``source`` is a :class:`Material`/:class:`AreaLight` (one-sided about
    ``normal``) or an :class:`EnvironmentLight` (``wo`` is the direction the
    radiance arrives from, i.e. the escaped ray's direction).
    """
    if isinstance(source, EnvironmentLight):
        return source.radiance(wo)
    if normal is None:
        raise ValueError("surface emission needs the geometric normal")
    if vdot(as_vec3(wo), as_vec3(normal)) > 0.0:
        return tuple(source.emission)
    return BLACK


def light_sample(light: AreaLight, scene, x, u: float, v: float) -> tuple[tuple, tuple, float]:
    """Uniform point on ``light``; ``x`` (the receiver) does not bias the choice."""
    p, n = sample_point_on_primitive(scene.geom, light.primitive_id, u, v)
    return p, n, 1.0 / light.area

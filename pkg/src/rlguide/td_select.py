"""Temporal-difference learned selection tables over a regular spatial grid.

One table row per grid cell, one column per action: an area light for
next event estimation, or an environment tile. Each value follows
``V <- (1 - alpha) V + alpha * max_channel(contribution)`` and the per-cell
CDFs are rebuilt between render iterations with the same relative floor as
the guiding hemispheres, so no action ever becomes unreachable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .core import TWO_PI, as_vec3, fill_distribution, relative_floor, sample_cdf
from .guiding import blend, learning_rate
from .materials import env_radiance

FOUR_PI = 4.0 * math.pi


class SelArrays(NamedTuple):
    lo: np.ndarray
    cell: np.ndarray
    res: np.ndarray
    v: np.ndarray
    visits: np.ndarray
    prob: np.ndarray
    cdf: np.ndarray
    floor: np.ndarray
    total: np.ndarray
    prior: np.ndarray


@njit(cache=True, inline="always")
def cell_of_k(sa, p):
    """Flat cell index ``ix + nx * (iy + ny * iz)``; points outside are clamped."""
    idx = 0
    stride = 1
    for a in range(3):
        c = int(math.floor((p[a] - sa.lo[a]) / sa.cell[a]))
        c = min(max(c, 0), sa.res[a] - 1)
        idx += c * stride
        stride *= sa.res[a]
    return idx


@njit(cache=True, inline="always")
def shading_cell_k(sa, p, n):
    """Cell of a surface point, looked up half a cell along its normal.

    The offset is taken per axis, so the two faces of a thin axis-aligned
    occluder always fall into different cells.
    """
    return cell_of_k(
        sa, (p[0] + 0.5 * sa.cell[0] * n[0], p[1] + 0.5 * sa.cell[1] * n[1], p[2] + 0.5 * sa.cell[2] * n[2])
    )


@njit(cache=True, inline="always")
def select_k(sa, c, u):
    i = sample_cdf(sa.cdf[c], u)
    return i, sa.prob[c, i]


@njit(cache=True, inline="always")
def update_value_k(sa, c, i, value, alpha):
    a = learning_rate(alpha, sa.visits[c, i])
    sa.v[c, i] = blend(sa.v[c, i], value, a)
    sa.visits[c, i] += 1
    return sa.v[c, i]


@njit(cache=True)
def rebuild_sel(sa, floor_rel, prior_weight):
    """Per-cell CDFs from ``V`` and a per-action prior.

    The prior of action ``j`` in cell ``c`` is ``prior[j] * sum(V) / sum(prior)``
    over the actions the cell has visited (a flat prior thus borrows their
    mean); a cell without visits samples proportionally to ``prior``. A
    never-visited action weighs its prior. A visited one weighs
    ``(visits * V + prior_weight * prior) / (visits + prior_weight)``, so with
    ``prior_weight = 0`` it is pushed to the floor as soon as its samples
    show no contribution.
    """
    n = sa.v.shape[1]
    w = np.empty(n)
    prior_mean = 0.0
    for i in range(n):
        prior_mean += sa.prior[i]
    prior_mean /= n
    for c in range(sa.v.shape[0]):
        acc = 0.0
        acc_p = 0.0
        seen = 0
        for i in range(n):
            if sa.visits[c, i] > 0:
                acc += sa.v[c, i]
                acc_p += sa.prior[i]
                seen += 1
        if seen == 0:
            scale = 1.0
        elif acc_p > 0.0:
            scale = acc / acc_p
        else:
            scale = acc / seen / prior_mean if prior_mean > 0.0 else 0.0
        for i in range(n):
            k = sa.visits[c, i]
            p = scale * sa.prior[i]
            w[i] = p if k == 0 else (k * sa.v[c, i] + prior_weight * p) / (k + prior_weight)
        fl = relative_floor(w, floor_rel)
        sa.floor[c] = fl
        sa.total[c] = fill_distribution(w, fl, sa.prob[c], sa.cdf[c])


@njit(cache=True, inline="always")
def tile_of_dir(tiles_x, tiles_y, d):
    """Tile ``tx + tiles_x * ty``: ``tx`` splits phi = atan2(z, x), ``ty`` splits cos theta = y from the +y pole."""
    phi = math.atan2(d[2], d[0])
    if phi < 0.0:
        phi += TWO_PI
    tx = min(int(phi / TWO_PI * tiles_x), tiles_x - 1)
    ty = min(max(int((1.0 - d[1]) * 0.5 * tiles_y), 0), tiles_y - 1)
    return tx + tiles_x * ty


@njit(cache=True, inline="always")
def dir_in_tile(tiles_x, tiles_y, tile, u, v):
    ty = tile // tiles_x
    tx = tile - ty * tiles_x
    u = min(max(u, 1e-12), 1.0 - 1e-12)
    v = min(max(v, 1e-12), 1.0 - 1e-12)
    y = 1.0 - 2.0 * (ty + u) / tiles_y
    r = math.sqrt(max(0.0, 1.0 - y * y))
    phi = TWO_PI * (tx + v) / tiles_x
    return (r * math.cos(phi), y, r * math.sin(phi))


def _grid_frame(bounds, res, margin: bool = False):
    """``(lo, cell, res)``; ``margin`` widens the box by half a cell per side.

    Scene grids use the margin so that points pushed off a boundary surface
    by ``shading_cell_k`` are not clamped back onto its other side.
    """
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    res = np.array(res, dtype=np.int64)
    if res.shape != (3,) or np.any(res < 1):
        raise ValueError(f"grid resolution must be three positive integers, got {res}")
    ext = hi - lo
    pad = 1e-6 * max(float(np.linalg.norm(ext)), 1.0)
    ext = np.maximum(ext, pad)
    if margin:
        half = 0.5 * ext / res
        lo = lo - half
        ext = ext + 2.0 * half
    return lo, ext / res, res


@dataclass
class SelectionGrid:
    """Spatial grid x actions table of learned values with per-cell CDFs.

    ``values`` start at zero; until a cell sees a nonzero contribution its
    floored distribution is uniform.
    """

    lo: np.ndarray
    cell: np.ndarray
    res: np.ndarray
    n_actions: int
    alpha: float | str = "visits"
    floor_rel: float = 1e-4
    prior_weight: float = 0.0

    def __post_init__(self):
        if self.n_actions < 1:
            raise ValueError("a selection grid needs at least one action")
        nc = int(np.prod(self.res))
        self.values = np.zeros((nc, self.n_actions))
        self.visits = np.zeros((nc, self.n_actions), dtype=np.int64)
        self.prob = np.full((nc, self.n_actions), 1.0 / self.n_actions)
        self.cdf = np.tile((np.arange(self.n_actions) + 1.0) / self.n_actions, (nc, 1))
        self.cdf[:, -1] = 1.0
        self.floor = np.ones(nc)
        self.total = np.full(nc, float(self.n_actions))
        # relative weights of never-visited actions (see rebuild_sel)
        self.prior = np.ones(self.n_actions)
        self._arrays = None

    @classmethod
    def over_bounds(cls, bounds, res=(16, 16, 16), n_actions: int = 1, **kwargs) -> "SelectionGrid":
        lo, cell, r = _grid_frame(bounds, res)
        return cls(lo, cell, r, n_actions, **kwargs)

    @property
    def cell_count(self) -> int:
        return self.values.shape[0]

    @property
    def alpha_value(self) -> float:
        return -1.0 if self.alpha == "visits" else float(self.alpha)

    def arrays(self) -> SelArrays:
        if self._arrays is None:
            self._arrays = SelArrays(
                self.lo, self.cell, self.res, self.values, self.visits, self.prob, self.cdf, self.floor, self.total,
                self.prior,
            )
        return self._arrays

    def rebuild(self) -> None:
        rebuild_sel(self.arrays(), self.floor_rel, self.prior_weight)

    def floor_share(self, c: int) -> float:
        """Probability mass a floored (never rewarded) action keeps in cell ``c``."""
        return float(self.floor[c] / self.total[c])

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "index", "value"])
            for c in range(self.cell_count):
                for i in range(self.n_actions):
                    w.writerow([c, i, repr(float(self.values[c, i]))])


class LightSelectionGrid(SelectionGrid):
    @classmethod
    def for_scene(cls, scene, res=(16, 16, 16), **kwargs) -> "LightSelectionGrid":
        lo, cell, r = _grid_frame(scene.bounds, res, margin=True)
        return cls(lo, cell, r, max(len(scene.lights), 1), **kwargs)


@dataclass
class EnvTileGrid(SelectionGrid):
    """Learned tile importance per cell, seeded by environment brightness.

    The brightness prior counts as ``prior_weight`` pseudo-observations, so a
    tile only sinks toward the floor after repeated evidence of occlusion.
    """

    tiles_x: int = 16
    tiles_y: int = 8

    def __post_init__(self):
        if self.n_actions != self.tiles_x * self.tiles_y:
            raise ValueError("n_actions must equal tiles_x * tiles_y")
        super().__post_init__()
        self.brightness_prob = np.full(self.n_actions, 1.0 / self.n_actions)
        self.brightness_cdf = (np.arange(self.n_actions) + 1.0) / self.n_actions

    @classmethod
    def for_scene(cls, scene, res=(16, 16, 16), tiles=(8, 16), **kwargs) -> "EnvTileGrid":
        """``tiles = (rows in cos theta, columns in phi)``."""
        lo, cell, r = _grid_frame(scene.bounds, res, margin=True)
        ty, tx = (int(t) for t in tiles)
        kwargs.setdefault("prior_weight", 1.0)
        grid = cls(lo, cell, r, tx * ty, tiles_x=tx, tiles_y=ty, **kwargs)
        if scene.environment is not None:
            grid.set_brightness(scene.environment.lattice)
        return grid

    @property
    def tile_count(self) -> int:
        return self.n_actions

    def set_brightness(self, lattice: np.ndarray, sub: int = 8) -> None:
        """Tile weights proportional to mean environment luminance over each tile.

        The same weights shape the prior of tiles a cell has not tried yet,
        so learning starts from brightness sampling and only has to discover
        occlusion.
        """
        w = tile_luminance(lattice, self.tiles_x, self.tiles_y, sub)
        fill_distribution(w, relative_floor(w, self.floor_rel), self.brightness_prob, self.brightness_cdf)
        self.prior[:] = w
        self.rebuild()


@njit(cache=True)
def tile_luminance(lattice, tiles_x, tiles_y, sub):
    """Mean luminance per tile from ``sub x sub`` stratified lookups."""
    t = tiles_x * tiles_y
    out = np.zeros(t)
    for tile in range(t):
        acc = 0.0
        for i in range(sub):
            for j in range(sub):
                d = dir_in_tile(tiles_x, tiles_y, tile, (i + 0.5) / sub, (j + 0.5) / sub)
                c = env_radiance(lattice, d)
                acc += 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
        out[tile] = acc / (sub * sub)
    return out


# ---------------------------------------------------------------------------
# Python entry points
# ---------------------------------------------------------------------------


def cell_of(grid: SelectionGrid, x) -> int:
    return int(cell_of_k(grid.arrays(), as_vec3(x)))


def shading_cell(grid: SelectionGrid, x, normal) -> int:
    return int(shading_cell_k(grid.arrays(), as_vec3(x), as_vec3(normal)))


def update_value(grid: SelectionGrid, c: int, l: int, contribution) -> float:
    """``V[c, l] <- (1 - alpha) V + alpha * max(contribution)`` with the grid's schedule."""
    contrib = as_vec3(contribution)
    if not all(math.isfinite(x) for x in contrib):
        raise ValueError("non-finite contribution")
    return float(update_value_k(grid.arrays(), c, l, max(contrib), grid.alpha_value))


def select_light(grid: SelectionGrid, c: int, u: float) -> tuple[int, float]:
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    i, p = select_k(grid.arrays(), c, u)
    return int(i), float(p)


select_env_tile = select_light


def sample_dir_in_tile(grid: EnvTileGrid, tile: int, u: float, v: float) -> tuple[tuple, float]:
    """Uniform direction inside ``tile``; the density is ``tiles / (4 pi)``."""
    if not 0 <= tile < grid.tile_count:
        raise ValueError(f"tile {tile} out of range")
    return dir_in_tile(grid.tiles_x, grid.tiles_y, tile, u, v), grid.tile_count / FOUR_PI


def tile_of(grid: EnvTileGrid, direction) -> int:
    return int(tile_of_dir(grid.tiles_x, grid.tiles_y, as_vec3(direction)))


def env_direction_pdf(grid: EnvTileGrid, c: int, direction) -> float:
    """Solid-angle density of learned tile selection followed by uniform in-tile sampling."""
    return float(grid.prob[c, tile_of(grid, direction)] * grid.tile_count / FOUR_PI)

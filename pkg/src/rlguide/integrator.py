"""Progressive path tracer with learned scattering, light and environment sampling.

Every mode shares one compiled path loop:

* ``bsdf``: baseline, scattering by BSDF importance sampling.
* ``rl`` / ``rl_max``: scattering proportional to the learned ``Q``; the
  two differ only in the update policy (expected SARSA vs. max).
* ``nee_td`` / ``nee_uniform``: next event estimation with TD-learned or
  uniform light selection; area-light pickup after the camera ray is
  disabled so every light contribution comes from exactly one strategy.
* ``rl_nee_td``: guided scattering plus TD-learned next event estimation.
* ``env_rl`` / ``env_is``: an environment sample per vertex through a tile
  chosen from a learned per-cell distribution or in proportion to texel
  brightness, combined with BSDF sampling by the balance heuristic.

Each iteration renders one path per pixel in parallel. During that phase
all tables are read-only and every path logs its learning targets; the logs
are applied in pixel order once the phase ends and the CDFs are rebuilt. The
image therefore does not depend on the thread count.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numba import njit

from .core import (
    as_vec3,
    luminance,
    onb,
    rng_next,
    stream_key,
    vadd,
    vdot,
    vmax,
    vmul,
    vnormalize,
    vscale,
    vsub,
)
from .geometry import STACK_SIZE, geometric_normal, offset_origin, segment_blocked, trace_any, trace_closest
from .guiding import (
    POLICIES,
    SAMPLING_MODES,
    HemisphereGrid,
    QArrays,
    QField,
    apply_q_update,
    continuation_value,
    lookup_probe,
    place_probes,
    rebuild_q,
    sample_guided,
)
from .materials import BLACK, bsdf_f, bsdf_pdf, bsdf_sample_dir, emitted_radiance, env_radiance, sample_point_on_primitive
from .td_select import (
    FOUR_PI,
    EnvTileGrid,
    LightSelectionGrid,
    SelArrays,
    shading_cell_k,
    dir_in_tile,
    rebuild_sel,
    select_k,
    tile_of_dir,
    update_value_k,
)

BSDF, RL, RL_MAX, NEE_TD, RL_NEE_TD, ENV_RL, NEE_UNIFORM, ENV_IS = range(8)
MODES = {
    "bsdf": BSDF,
    "rl": RL,
    "rl_max": RL_MAX,
    "nee_td": NEE_TD,
    "rl_nee_td": RL_NEE_TD,
    "env_rl": ENV_RL,
    "nee_uniform": NEE_UNIFORM,
    "env_is": ENV_IS,
}
GUIDED_MODES = ("rl", "rl_max", "rl_nee_td")
NEE_MODES = ("nee_td", "rl_nee_td", "nee_uniform")
ENV_MODES = ("env_rl", "env_is")
# fixed-strategy counterparts of nee_td and env_rl, kept for comparisons
BASELINE_MODES = ("nee_uniform", "env_is")


@dataclass(frozen=True)
class RenderConfig:
    """Render parameters; ``width``/``height`` of ``None`` take the camera's."""

    width: int | None = None
    height: int | None = None
    iterations: int = 16
    max_depth: int = 32
    mode: str = "bsdf"
    alpha: float | str = "visits"
    probe_count: int = 1024
    strata: tuple[int, int] = (8, 16)
    grid: tuple[int, int, int] = (16, 16, 16)
    floor: float = 1e-4
    seed: int = 0
    threads: int = 0
    sampling: str = "proportional_q_bsdf_cos"
    freeze_after: int | None = None
    deterministic: bool = False
    rr_depth: int = 5
    env_tiles: tuple[int, int] = (8, 16)
    normal_cos_min: float = 0.7

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {sorted(MODES)}")
        if self.width is not None and self.width < 1 or self.height is not None and self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.probe_count < 1:
            raise ValueError("probe_count must be >= 1")
        if len(self.strata) != 2 or min(self.strata) < 1:
            raise ValueError("strata must be (bands, sectors) with both >= 1")
        if len(self.grid) != 3 or min(self.grid) < 1:
            raise ValueError("grid must be three positive integers")
        if not self.floor > 0:
            raise ValueError("floor must be > 0")
        if self.alpha != "visits" and not 0.0 < float(self.alpha) <= 1.0:
            raise ValueError("constant alpha must lie in (0, 1]")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.threads < 0:
            raise ValueError("threads must be >= 0")

    @property
    def policy(self) -> str:
        return "q_max" if self.mode == "rl_max" else "expected_sarsa"

    @property
    def guided(self) -> bool:
        return self.mode in GUIDED_MODES

    @property
    def uses_nee(self) -> bool:
        return self.mode in NEE_MODES

    @property
    def uses_env_tiles(self) -> bool:
        return self.mode in ENV_MODES

    def with_(self, **kwargs) -> "RenderConfig":
        return replace(self, **kwargs)


class Ctx(NamedTuple):
    geom: object
    mats: object
    lights: object
    env: np.ndarray
    qa: QArrays
    la: SelArrays
    ea: SelArrays
    env_bprob: np.ndarray
    env_bcdf: np.ndarray
    mode: int
    max_depth: int
    rr_depth: int
    policy: int
    learn_q: bool
    learn_v: bool
    has_env: bool
    eps: float


class Logs(NamedTuple):
    """Per-pixel learning logs filled during the render phase."""

    q_probe: np.ndarray
    q_k: np.ndarray
    q_t: np.ndarray
    q_n: np.ndarray
    v_cell: np.ndarray
    v_idx: np.ndarray
    v_val: np.ndarray
    v_n: np.ndarray


def make_logs(rows: int, depth: int) -> Logs:
    return Logs(
        np.zeros((rows, depth), dtype=np.int64),
        np.zeros((rows, depth), dtype=np.int64),
        np.zeros((rows, depth)),
        np.zeros(rows, dtype=np.int64),
        np.zeros((rows, 2 * depth), dtype=np.int64),
        np.zeros((rows, 2 * depth), dtype=np.int64),
        np.zeros((rows, 2 * depth)),
        np.zeros(rows, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# compiled path loop
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def next_event_k(ctx, learned, y, n, ng, m, wo, rng, stack):
    """One light sample; returns ``(estimate, light, contribution max-norm)``.

    The max-norm is taken before dividing by the selection probability;
    occluded or back-facing samples contribute 0.
    """
    lights = ctx.lights
    nl = lights.prim.shape[0]
    if lights.prim[0] < 0:
        return BLACK, -1, 0.0
    u = rng_next(rng)
    if learned:
        l, psel = select_k(ctx.la, shading_cell_k(ctx.la, y, n), u)
    else:
        l = min(int(u * nl), nl - 1)
        psel = 1.0 / nl
    p, nlight = sample_point_on_primitive(ctx.geom, lights.prim[l], rng_next(rng), rng_next(rng))
    dv = vsub(p, y)
    dist2 = vdot(dv, dv)
    if dist2 <= 0.0:
        return BLACK, l, 0.0
    wi = vscale(dv, 1.0 / math.sqrt(dist2))
    cos_x = vdot(wi, n)
    cos_l = -vdot(wi, nlight)
    if cos_x <= 0.0 or cos_l <= 0.0:
        return BLACK, l, 0.0
    origin = offset_origin(y, ng, wi, ctx.eps)
    if segment_blocked(ctx.geom, origin, p, ctx.eps, stack):
        return BLACK, l, 0.0
    f = bsdf_f(ctx.mats, m, wi, wo, n)
    g = cos_x * cos_l / dist2 * lights.area[l]
    le = (lights.emission[l, 0], lights.emission[l, 1], lights.emission[l, 2])
    c = vscale(vmul(le, f), g)
    return vscale(c, 1.0 / psel), l, vmax(c)


@njit(cache=True, inline="always")
def _light_of_prim(lights, prim):
    for l in range(lights.prim.shape[0]):
        if lights.prim[l] == prim:
            return l
    return -1


@njit(cache=True, inline="always")
def env_tile_pdf(ctx, learned, cell, tiles_x, tiles_y, wi):
    """Solid-angle density of the tile strategy for direction ``wi``."""
    nt = tiles_x * tiles_y
    t = tile_of_dir(tiles_x, tiles_y, wi)
    p = ctx.ea.prob[cell, t] if learned else ctx.env_bprob[t]
    return p * nt / FOUR_PI


@njit(cache=True, inline="always")
def env_next_event_k(ctx, learned, y, n, ng, m, wo, rng, stack, tiles_x, tiles_y):
    """Environment sample through a tile, MIS-weighted against BSDF sampling.

    Returns ``(estimate, cell, tile, contribution max-norm)``; the norm is
    the unweighted contribution divided by the in-tile density only, and is
    0 for occluded or below-horizon samples.
    """
    nt = tiles_x * tiles_y
    cell = shading_cell_k(ctx.ea, y, n)
    u = rng_next(rng)
    if learned:
        tile, _ = select_k(ctx.ea, cell, u)
    else:
        tile = _sample_row(ctx.env_bcdf, u)
    wi = dir_in_tile(tiles_x, tiles_y, tile, rng_next(rng), rng_next(rng))
    cos_i = vdot(wi, n)
    if cos_i <= 0.0:
        return BLACK, cell, tile, 0.0
    origin = offset_origin(y, ng, wi, ctx.eps)
    if trace_any(ctx.geom, origin, wi, 0.0, np.inf, stack):
        return BLACK, cell, tile, 0.0
    c = vscale(vmul(env_radiance(ctx.env, wi), bsdf_f(ctx.mats, m, wi, wo, n)), cos_i)
    pt = env_tile_pdf(ctx, learned, cell, tiles_x, tiles_y, wi)
    pb = bsdf_pdf(ctx.mats, m, wi, wo, n)
    return vscale(c, 1.0 / (pt + pb)), cell, tile, vmax(c) * FOUR_PI / nt


@njit(cache=True)
def trace_path_k(ctx, o, d, rng, stack, logs, row, tiles_x, tiles_y):
    """One path; returns ``(radiance, segments, lookup_failures, nan)``.

    The loop intersects, updates ``Q`` for the previous vertex, terminates
    on emitters and the environment, and otherwise scatters. Learning
    targets are appended to ``logs[row]``; the tables are only read.
    """
    mode = ctx.mode
    guided = mode == RL or mode == RL_MAX or mode == RL_NEE_TD
    nee = mode == NEE_TD or mode == RL_NEE_TD or mode == NEE_UNIFORM
    nee_learned = mode == NEE_TD or mode == RL_NEE_TD
    env_nee = mode == ENV_RL or mode == ENV_IS
    env_learned = mode == ENV_RL

    thr = (1.0, 1.0, 1.0)
    rad = (0.0, 0.0, 0.0)
    segments = 0
    failures = 0
    prev_probe = -1
    prev_k = -1
    # BSDF-sampling weight of the last bounce for environment MIS
    env_w = 1.0
    prev_cell = 0
    prev_fcos = BLACK
    nq = 0
    nv = 0

    for depth in range(ctx.max_depth):
        t, prim = trace_closest(ctx.geom, o, d, 0.0, np.inf, stack)
        segments += 1
        wo = (-d[0], -d[1], -d[2])

        if prim >= 0:
            y = vadd(o, vscale(d, t))
            ng = geometric_normal(ctx.geom, prim, y)
            n = ng if vdot(ng, wo) > 0.0 else (-ng[0], -ng[1], -ng[2])
            m = ctx.geom.prim_mat[prim]
            tb = onb(n)
            probe_y = lookup_probe(ctx.qa, y, n) if guided else -1
            le = emitted_radiance(ctx.mats, m, wo, ng)
        else:
            y = o
            ng = d
            n = d
            m = -1
            tb = (d, d)
            probe_y = -1
            le = env_radiance(ctx.env, d) if ctx.has_env else BLACK

        # addition 1: learning target for the previous vertex
        if depth > 0 and ctx.learn_q and prev_probe >= 0:
            target = luminance(le)
            if prim >= 0:
                target += continuation_value(ctx.qa, ctx.policy, probe_y, ctx.mats, m, wo, tb[0], tb[1], n, rng)
            if math.isfinite(target):
                logs.q_probe[row, nq] = prev_probe
                logs.q_k[row, nq] = prev_k
                logs.q_t[row, nq] = target
                nq += 1

        # the continuation ray doubles as a sample of the tile or light it reached
        if depth > 0 and ctx.learn_v:
            if env_learned and ctx.has_env:
                val = vmax(vmul(le, prev_fcos)) * FOUR_PI / (tiles_x * tiles_y) if prim < 0 else 0.0
                logs.v_cell[row, nv] = prev_cell
                logs.v_idx[row, nv] = tile_of_dir(tiles_x, tiles_y, d)
                logs.v_val[row, nv] = val
                nv += 1
            elif nee_learned and prim >= 0:
                l = _light_of_prim(ctx.lights, prim)
                if l >= 0:
                    g = max(vdot(wo, ng), 0.0) * ctx.lights.area[l] / (t * t)
                    logs.v_cell[row, nv] = prev_cell
                    logs.v_idx[row, nv] = l
                    logs.v_val[row, nv] = vmax(vmul(le, prev_fcos)) * g
                    nv += 1

        if prim < 0:
            rad = vadd(rad, vscale(vmul(thr, le), env_w))
            break
        if ctx.mats.emission[m, 0] > 0.0 or ctx.mats.emission[m, 1] > 0.0 or ctx.mats.emission[m, 2] > 0.0:
            if depth == 0 or not nee:
                rad = vadd(rad, vmul(thr, le))
            break

        if nee:
            c, l, norm = next_event_k(ctx, nee_learned, y, n, ng, m, wo, rng, stack)
            rad = vadd(rad, vmul(thr, c))
            if ctx.learn_v and nee_learned and l >= 0:
                logs.v_cell[row, nv] = shading_cell_k(ctx.la, y, n)
                logs.v_idx[row, nv] = l
                logs.v_val[row, nv] = norm
                nv += 1
        if env_nee and ctx.has_env:
            c, cell, tile, norm = env_next_event_k(ctx, env_learned, y, n, ng, m, wo, rng, stack, tiles_x, tiles_y)
            rad = vadd(rad, vmul(thr, c))
            if ctx.learn_v and env_learned:
                logs.v_cell[row, nv] = cell
                logs.v_idx[row, nv] = tile
                logs.v_val[row, nv] = norm
                nv += 1

        if depth + 1 >= ctx.max_depth:
            break
        if depth >= ctx.rr_depth:
            q = min(1.0, vmax(thr))
            if rng_next(rng) >= q:
                break
            thr = vscale(thr, 1.0 / q)

        # addition 2: scattering
        prev_probe = -1
        k = -1
        if guided and probe_y >= 0:
            wi, pdf, k = sample_guided(ctx.qa, probe_y, tb[0], tb[1], n, rng_next(rng), rng_next(rng), rng_next(rng))
            f = bsdf_f(ctx.mats, m, wi, wo, n)
            prev_probe = probe_y
        else:
            if guided:
                failures += 1
            wi, pdf, f = bsdf_sample_dir(ctx.mats, m, wo, n, rng_next(rng), rng_next(rng))

        cos_i = vdot(wi, n)
        if cos_i <= 0.0 or pdf <= 0.0 or vmax(f) <= 0.0:
            break
        if env_nee and ctx.has_env:
            pt = env_tile_pdf(ctx, env_learned, shading_cell_k(ctx.ea, y, n), tiles_x, tiles_y, wi)
            env_w = pdf / (pdf + pt)
        prev_k = k
        prev_fcos = vscale(f, cos_i)
        if env_learned:
            prev_cell = shading_cell_k(ctx.ea, y, n)
        elif nee_learned:
            prev_cell = shading_cell_k(ctx.la, y, n)
        thr = vscale(vmul(thr, f), cos_i / pdf)
        o = offset_origin(y, ng, wi, ctx.eps)
        d = wi

    logs.q_n[row] = nq
    logs.v_n[row] = nv
    bad = not (math.isfinite(rad[0]) and math.isfinite(rad[1]) and math.isfinite(rad[2]))
    if bad:
        rad = BLACK
    return rad, segments, failures, bad


@njit(cache=True, inline="always")
def _sample_row(cdf, u):
    lo = 0
    hi = cdf.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


def camera_matrix(cam) -> np.ndarray:
    """Rows: position, forward, right * half_w, up * half_h."""
    return np.array(
        [cam.position, cam.forward, vscale(cam.right, cam.half_w), vscale(cam.up, cam.half_h)], dtype=np.float64
    )


@njit(cache=True, inline="always")
def camera_ray(cm, w, h, px, py, jx, jy):
    """Pinhole ray through ``(px + jx, py + jy)``; row 0 is the top of the image."""
    sx = 2.0 * (px + jx) / w - 1.0
    sy = 1.0 - 2.0 * (py + jy) / h
    d = (
        cm[1, 0] + sx * cm[2, 0] + sy * cm[3, 0],
        cm[1, 1] + sx * cm[2, 1] + sy * cm[3, 1],
        cm[1, 2] + sx * cm[2, 2] + sy * cm[3, 2],
    )
    return (cm[0, 0], cm[0, 1], cm[0, 2]), vnormalize(d)


@njit(cache=True, nogil=True)
def render_pixels(ctx, cam, w, h, seed, iteration, tiles_x, tiles_y, acc_sum, acc_sq, seg, nonzero, fail, nan, logs, start, stop):
    """Render pixels ``[start, stop)`` of one iteration; pixel ranges are independent."""
    for pix in range(start, stop):
        px = pix % w
        py = pix // w
        rng = np.empty(2, dtype=np.uint64)
        rng[0] = stream_key(seed, pix, iteration)
        rng[1] = 0
        stack = np.empty(STACK_SIZE, dtype=np.int64)
        o, d = camera_ray(cam, w, h, px, py, rng_next(rng), rng_next(rng))
        rad, s, f, bad = trace_path_k(ctx, o, d, rng, stack, logs, pix, tiles_x, tiles_y)
        for c in range(3):
            acc_sum[py, px, c] += rad[c]
            acc_sq[py, px, c] += rad[c] * rad[c]
        seg[pix] = s
        nonzero[pix] = rad[0] > 0.0 or rad[1] > 0.0 or rad[2] > 0.0
        fail[pix] = f
        nan[pix] = bad


@njit(cache=True)
def apply_logs(qa, q_alpha, sa, v_alpha, logs):
    """Apply logged updates sequentially in pixel order; returns ``(q_updates, v_updates)``."""
    nq = 0
    nv = 0
    for row in range(logs.q_n.shape[0]):
        for j in range(logs.q_n[row]):
            apply_q_update(qa, logs.q_probe[row, j], logs.q_k[row, j], logs.q_t[row, j], q_alpha)
            nq += 1
        for j in range(logs.v_n[row]):
            update_value_k(sa, logs.v_cell[row, j], logs.v_idx[row, j], logs.v_val[row, j], v_alpha)
            nv += 1
    return nq, nv


# ---------------------------------------------------------------------------
# accumulation and statistics
# ---------------------------------------------------------------------------


@dataclass
class Accumulator:
    """Per-pixel radiance sums plus global path counters."""

    height: int
    width: int
    sum: np.ndarray = field(init=False)
    sumsq: np.ndarray = field(init=False)
    count: int = 0
    paths_total: int = 0
    paths_nonzero: int = 0
    sum_path_length: int = 0
    q_updates: int = 0
    v_updates: int = 0
    lookup_failures: int = 0
    nan_paths: int = 0

    def __post_init__(self):
        self.sum = np.zeros((self.height, self.width, 3))
        self.sumsq = np.zeros((self.height, self.width, 3))

    def mean(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros_like(self.sum)
        return self.sum / self.count

    def variance_of_mean(self) -> np.ndarray:
        """Unbiased per-pixel sample variance divided by the sample count."""
        n = self.count
        if n < 2:
            return np.full_like(self.sum, np.inf)
        mean = self.sum / n
        var = np.maximum(self.sumsq / n - mean * mean, 0.0) * n / (n - 1)
        return var / n


@dataclass
class IterationStats:
    iteration: int
    paths: int
    nonzero_paths: int
    avg_path_length: float
    ms_elapsed: float


@dataclass
class RenderStats:
    config: RenderConfig
    accumulator: Accumulator
    iterations: list[IterationStats] = field(default_factory=list)
    qfield: QField | None = None
    light_grid: LightSelectionGrid | None = None
    env_grid: EnvTileGrid | None = None
    ms_total: float = 0.0
    scene: str = ""

    @property
    def paths(self) -> int:
        return self.accumulator.paths_total

    @property
    def nonzero_fraction(self) -> float:
        a = self.accumulator
        return a.paths_nonzero / a.paths_total if a.paths_total else 0.0

    @property
    def avg_path_length(self) -> float:
        a = self.accumulator
        return a.sum_path_length / a.paths_total if a.paths_total else 0.0

    @property
    def ms_per_iteration(self) -> float:
        return self.ms_total / len(self.iterations) if self.iterations else 0.0

    def header(self) -> list[str]:
        """``key=value`` lines describing every parameter of the run."""
        c = self.config
        lines = [f"scene={self.scene}"] + [f"{k}={getattr(c, k)}" for k in c.__dataclass_fields__]
        lines.append(f"policy={c.policy}")
        if self.qfield is not None:
            lines.append(f"probes={self.qfield.probe_count}")
            lines.append(f"q_memory_bytes={self.qfield.memory_bytes}")
        a = self.accumulator
        lines += [
            f"paths_total={a.paths_total}",
            f"nonzero_fraction={self.nonzero_fraction:.6g}",
            f"avg_path_length={self.avg_path_length:.6g}",
            f"q_updates={a.q_updates}",
            f"v_updates={a.v_updates}",
            f"lookup_failures={a.lookup_failures}",
            f"nan_paths={a.nan_paths}",
            f"ms_total={self.ms_total:.3f}",
        ]
        return lines

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.header():
                fh.write(f"# {line}\n")
            fh.write("iteration,paths,nonzero_paths,avg_path_length,ms_elapsed\n")
            for it in self.iterations:
                fh.write(f"{it.iteration},{it.paths},{it.nonzero_paths},{it.avg_path_length:.6f},{it.ms_elapsed:.3f}\n")


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def thread_count(config: RenderConfig) -> int:
    if config.deterministic:
        return 1
    return config.threads or os.cpu_count() or 1


def render_iteration(pool, chunks, ctx, cam, w, h, seed, iteration, tiles_x, tiles_y, acc, seg, nonzero, fail, nan, logs):
    args = (ctx, cam, w, h, seed, iteration, tiles_x, tiles_y, acc.sum, acc.sumsq, seg, nonzero, fail, nan, logs)
    if pool is None:
        render_pixels(*args, 0, w * h)
        return
    futures = [pool.submit(render_pixels, *args, a, b) for a, b in chunks]
    for f in futures:
        f.result()


class Learners(NamedTuple):
    qfield: QField
    light_grid: LightSelectionGrid
    env_grid: EnvTileGrid


def make_learners(scene, config: RenderConfig, qfield: QField | None = None) -> Learners:
    """Tables for ``config.mode``; unused ones are minimal placeholders."""
    bands, sectors = config.strata
    kw = dict(alpha=config.alpha, floor_rel=config.floor)
    if qfield is None:
        count = config.probe_count if config.guided else 1
        if scene.primitives:
            qfield = place_probes(
                scene,
                count,
                HemisphereGrid(bands, sectors),
                policy=config.policy,
                sampling_mode=config.sampling,
                normal_cos_min=config.normal_cos_min,
                **kw,
            )
        else:
            qfield = QField(np.zeros((1, 3)), np.array([[0.0, 1.0, 0.0]]), np.zeros(1, dtype=np.int64), HemisphereGrid(bands, sectors))
    res = config.grid if config.mode in ("nee_td", "rl_nee_td") else (1, 1, 1)
    light_grid = LightSelectionGrid.for_scene(scene, res, **kw)
    env_res = config.grid if config.mode == "env_rl" else (1, 1, 1)
    env_grid = EnvTileGrid.for_scene(scene, env_res, tiles=config.env_tiles, **kw)
    return Learners(qfield, light_grid, env_grid)


def build_ctx(scene, config: RenderConfig, learners: Learners, learning: bool) -> Ctx:
    selection = learners.env_grid.arrays() if config.mode == "env_rl" else learners.light_grid.arrays()
    return Ctx(
        scene.geom,
        scene.mats,
        scene.light_arrays,
        scene.env_lattice,
        learners.qfield.arrays(),
        learners.light_grid.arrays(),
        learners.env_grid.arrays(),
        learners.env_grid.brightness_prob,
        learners.env_grid.brightness_cdf,
        MODES[config.mode],
        int(config.max_depth),
        int(config.rr_depth),
        POLICIES[config.policy],
        bool(learning and config.guided),
        bool(learning and config.mode in ("nee_td", "rl_nee_td", "env_rl")),
        bool(scene.has_environment),
        float(scene.eps),
    )


def _selection_grid(config: RenderConfig, learners: Learners):
    return learners.env_grid if config.mode == "env_rl" else learners.light_grid


def rebuild_all(config: RenderConfig, learners: Learners, scene) -> None:
    if config.guided:
        rebuild_q(learners.qfield.arrays(), scene.mats, SAMPLING_MODES[config.sampling], config.floor)
    if config.mode in ("nee_td", "rl_nee_td", "env_rl"):
        g = _selection_grid(config, learners)
        rebuild_sel(g.arrays(), config.floor, g.prior_weight)


def render(scene, config: RenderConfig, qfield: QField | None = None) -> tuple[np.ndarray, RenderStats]:
    """Render ``config.iterations`` paths per pixel; returns ``(mean image, stats)``.

    ``qfield`` reuses (and keeps training) an existing probe set. After
    ``config.freeze_after`` iterations learning stops and the sampling
    distributions stay fixed.
    """
    w = config.width or scene.camera.width
    h = config.height or scene.camera.height
    cam = camera_matrix(scene.camera.arrays(w, h))
    learners = make_learners(scene, config, qfield)
    rebuild_all(config, learners, scene)
    acc = Accumulator(h, w)
    stats = RenderStats(config.with_(width=w, height=h), acc, qfield=learners.qfield if config.guided else None)
    stats.scene = scene.name
    if config.mode in ("nee_td", "rl_nee_td"):
        stats.light_grid = learners.light_grid
    if config.mode in ENV_MODES:
        stats.env_grid = learners.env_grid
    npix = w * h
    logs = make_logs(npix, config.max_depth)
    seg = np.zeros(npix, dtype=np.int64)
    nonzero = np.zeros(npix, dtype=np.bool_)
    fail = np.zeros(npix, dtype=np.int64)
    nan = np.zeros(npix, dtype=np.bool_)
    ty, tx = learners.env_grid.tiles_y, learners.env_grid.tiles_x
    sel = _selection_grid(config, learners)
    q_alpha = learners.qfield.alpha_value
    ctx_learn = build_ctx(scene, config, learners, True)
    ctx_frozen = build_ctx(scene, config, learners, False)
    nthreads = min(thread_count(config), npix)
    pool = ThreadPoolExecutor(nthreads) if nthreads > 1 else None
    bounds = np.linspace(0, npix, 4 * nthreads + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    t_start = time.perf_counter()
    for it in range(config.iterations):
        learning = config.freeze_after is None or it < config.freeze_after
        ctx = ctx_learn if learning else ctx_frozen
        t0 = time.perf_counter()
        render_iteration(
            pool, chunks, ctx, cam, w, h, np.uint64(config.seed), it, tx, ty, acc, seg, nonzero, fail, nan, logs
        )
        if learning:
            nq, nv = apply_logs(learners.qfield.arrays(), q_alpha, sel.arrays(), sel.alpha_value, logs)
            acc.q_updates += int(nq)
            acc.v_updates += int(nv)
            rebuild_all(config, learners, scene)
        ms = (time.perf_counter() - t0) * 1e3
        acc.count += 1
        nz = int(nonzero.sum())
        total_seg = int(seg.sum())
        acc.paths_total += npix
        acc.paths_nonzero += nz
        acc.sum_path_length += total_seg
        acc.lookup_failures += int(fail.sum())
        acc.nan_paths += int(nan.sum())
        stats.iterations.append(IterationStats(it, npix, nz, total_seg / npix, ms))
    stats.ms_total = (time.perf_counter() - t_start) * 1e3
    if pool is not None:
        pool.shutdown()
    return acc.mean(), stats


# ---------------------------------------------------------------------------
# single-path entry points
# ---------------------------------------------------------------------------


def trace_path(scene, qfield, lightgrid, pixel_ray, rng, config: RenderConfig, env_grid=None):
    """Trace one path from ``pixel_ray = (origin, direction)``.

    Logged learning updates are applied right away. Returns
    ``(radiance, segments, nonzero)``.
    """
    if config.guided and qfield is None:
        raise ValueError(f"mode {config.mode} needs a Q field")
    base = make_learners(scene, config.with_(probe_count=1), qfield)
    learners = Learners(
        qfield if qfield is not None else base.qfield,
        lightgrid if lightgrid is not None else base.light_grid,
        env_grid if env_grid is not None else base.env_grid,
    )
    ctx = build_ctx(scene, config, learners, config.freeze_after is None)
    logs = make_logs(1, config.max_depth)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    o, d = (as_vec3(v) for v in pixel_ray)
    rad, seg, _, _ = trace_path_k(
        ctx, o, d, rng.state, stack, logs, 0, learners.env_grid.tiles_x, learners.env_grid.tiles_y
    )
    sel = _selection_grid(config, learners)
    apply_logs(learners.qfield.arrays(), learners.qfield.alpha_value, sel.arrays(), sel.alpha_value, logs)
    return rad, int(seg), max(rad) > 0.0


def next_event(scene, lightgrid: LightSelectionGrid | None, x, normal, material_id: int, wo, rng, learn: bool = True):
    """Next event estimate at ``x``; ``lightgrid=None`` selects lights uniformly.

    With a grid, the selected light's value is updated from the
    contribution's max-norm (before the selection-probability division).
    """
    n = vnormalize(as_vec3(normal))
    wo = as_vec3(wo)
    ng = n
    if vdot(n, wo) < 0.0:
        n = vscale(n, -1.0)
    grid = lightgrid if lightgrid is not None else LightSelectionGrid.for_scene(scene, (1, 1, 1))
    ga = grid.arrays()
    ctx = Ctx(
        scene.geom, scene.mats, scene.light_arrays, scene.env_lattice, None, ga, ga, np.ones(1), np.ones(1),
        NEE_TD, 1, 1, 0, False, False, False, float(scene.eps),
    )
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    x = as_vec3(x)
    c, l, norm = next_event_k(ctx, lightgrid is not None, x, n, ng, int(material_id), wo, rng.state, stack)
    if learn and lightgrid is not None and l >= 0:
        update_value_k(ga, shading_cell_k(ga, x, n), l, norm, grid.alpha_value)
    return c

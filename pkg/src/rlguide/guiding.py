"""Learned incident radiance ``Q`` on probe hemispheres.

Probes sit on scene surfaces at Hammersley positions. Each carries an
equal-solid-angle stratification of the hemisphere (uniform in cos theta and
phi), one value per stratum, per-stratum visit counts and a sampling CDF
that is rebuilt between render iterations.

Strata are always expressed in the shading frame of the point being queried
(built from its normal with :func:`rlguide.core.onb`), so every direction of
that point's hemisphere keeps a positive density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .core import (
    TWO_PI,
    Frame,
    as_vec3,
    fill_distribution,
    luminance,
    radical_inverse2,
    relative_floor,
    rng_next,
    sample_cdf,
    to_local,
    to_world,
    vdot,
    vscale,
    vsub,
)
from .geometry import Hit
from .materials import EnvironmentLight, MatArrays, Material, bsdf_f, emitted, pack_materials, sample_point_on_primitive

EXPECTED_SARSA, Q_MAX = 0, 1
POLICIES = {"expected_sarsa": EXPECTED_SARSA, "q_max": Q_MAX}
PROPORTIONAL_Q, PROPORTIONAL_Q_BSDF_COS = 0, 1
SAMPLING_MODES = {"proportional_q": PROPORTIONAL_Q, "proportional_q_bsdf_cos": PROPORTIONAL_Q_BSDF_COS}

# samples stay this far (in unit-square coordinates) from stratum borders so
# that direction -> stratum round trips are exact in floating point
_EDGE = 1e-12


class HemisphereGrid(NamedTuple):
    bands: int = 8
    sectors: int = 16

    @property
    def n(self) -> int:
        return self.bands * self.sectors

    @property
    def solid_angle(self) -> float:
        return TWO_PI / self.n


class QArrays(NamedTuple):
    pos: np.ndarray
    normal: np.ndarray
    q: np.ndarray
    visits: np.ndarray
    prob: np.ndarray
    cdf: np.ndarray
    floor: np.ndarray
    total: np.ndarray
    probe_mat: np.ndarray
    bands: int
    sectors: int
    cos_min: float
    grid_lo: np.ndarray
    grid_cell: np.ndarray
    grid_res: np.ndarray
    cell_start: np.ndarray
    cell_items: np.ndarray


# ---------------------------------------------------------------------------
# stratification kernels
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def stratum_of_local(bands, sectors, d):
    """Stratum of a local direction with ``d[2] >= 0``: ``sector + sectors * band``."""
    band = min(int(d[2] * bands), bands - 1)
    phi = math.atan2(d[1], d[0])
    if phi < 0.0:
        phi += TWO_PI
    sector = min(int(phi / TWO_PI * sectors), sectors - 1)
    return sector + sectors * band


@njit(cache=True, inline="always")
def dir_in_stratum_local(bands, sectors, k, u, v):
    band = k // sectors
    sector = k - band * sectors
    u = min(max(u, _EDGE), 1.0 - _EDGE)
    v = min(max(v, _EDGE), 1.0 - _EDGE)
    cos_t = (band + u) / bands
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = TWO_PI * (sector + v) / sectors
    return (sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t)


@njit(cache=True, inline="always")
def stratum_center_local(bands, sectors, k):
    return dir_in_stratum_local(bands, sectors, k, 0.5, 0.5)


# ---------------------------------------------------------------------------
# probe lookup
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _cell_coord(qa, p, a):
    c = int((p[a] - qa.grid_lo[a]) / qa.grid_cell[a])
    return min(max(c, 0), qa.grid_res[a] - 1)


@njit(cache=True, inline="always")
def lookup_probe(qa, p, n):
    """Nearest probe with ``dot(probe normal, n) >= cos_min``; -1 if none.

    Ring search over the uniform grid; equidistant probes resolve to the lower
    index.
    """
    rx, ry, rz = qa.grid_res[0], qa.grid_res[1], qa.grid_res[2]
    cx, cy, cz = _cell_coord(qa, p, 0), _cell_coord(qa, p, 1), _cell_coord(qa, p, 2)
    hmin = min(qa.grid_cell[0], min(qa.grid_cell[1], qa.grid_cell[2]))
    max_r = max(rx, max(ry, rz))
    best = -1
    best_d2 = np.inf
    for r in range(max_r + 1):
        for ix in range(max(cx - r, 0), min(cx + r, rx - 1) + 1):
            for iy in range(max(cy - r, 0), min(cy + r, ry - 1) + 1):
                on_shell = abs(ix - cx) == r or abs(iy - cy) == r
                for iz in range(max(cz - r, 0), min(cz + r, rz - 1) + 1):
                    if not on_shell and abs(iz - cz) != r:
                        continue
                    cell = (ix * ry + iy) * rz + iz
                    for j in range(qa.cell_start[cell], qa.cell_start[cell + 1]):
                        i = qa.cell_items[j]
                        if qa.normal[i, 0] * n[0] + qa.normal[i, 1] * n[1] + qa.normal[i, 2] * n[2] < qa.cos_min:
                            continue
                        dx = qa.pos[i, 0] - p[0]
                        dy = qa.pos[i, 1] - p[1]
                        dz = qa.pos[i, 2] - p[2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 < best_d2 or (d2 == best_d2 and i < best):
                            best_d2 = d2
                            best = i
        # every probe outside the searched shells is at least r * hmin away
        if best >= 0 and math.sqrt(best_d2) < r * hmin:
            break
    return best


@njit(cache=True)
def lookup_probe_brute(qa, p, n):
    best = -1
    best_d2 = np.inf
    for i in range(qa.pos.shape[0]):
        if qa.normal[i, 0] * n[0] + qa.normal[i, 1] * n[1] + qa.normal[i, 2] * n[2] < qa.cos_min:
            continue
        d2 = (qa.pos[i, 0] - p[0]) ** 2 + (qa.pos[i, 1] - p[1]) ** 2 + (qa.pos[i, 2] - p[2]) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best = i
    return best


# ---------------------------------------------------------------------------
# estimators, targets, updates
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def estimate_incident_k(qa, probe, mats, m, wo, t, b, n, rng):
    """(2 pi / n) sum_k Q_k lum(f_s(w_k, wo)) cos theta_k, one uniform w_k per stratum."""
    bands, sectors = qa.bands, qa.sectors
    ns = bands * sectors
    acc = 0.0
    if mats.phong[m] == 0.0:
        # Lambertian: f_s is constant over the hemisphere, phi does not matter
        if vdot(wo, n) <= 0.0:
            return 0.0
        for k in range(ns):
            qk = qa.q[probe, k]
            u = rng_next(rng)
            if qk == 0.0:
                continue
            acc += qk * ((k // sectors) + u) / bands
        return acc * TWO_PI / ns * luminance((mats.albedo[m, 0], mats.albedo[m, 1], mats.albedo[m, 2])) / math.pi
    for k in range(ns):
        u = rng_next(rng)
        v = rng_next(rng)
        local = dir_in_stratum_local(bands, sectors, k, u, v)
        wk = to_world(t, b, n, local)
        acc += qa.q[probe, k] * luminance(bsdf_f(mats, m, wk, wo, n)) * local[2]
    return acc * TWO_PI / ns


@njit(cache=True, inline="always")
def qmax_target_k(qa, probe, mats, m, wo, t, b, n):
    """max_k 2 pi Q_k lum(f_s(center_k, wo)) cos(center_k)."""
    bands, sectors = qa.bands, qa.sectors
    best = 0.0
    for k in range(bands * sectors):
        local = stratum_center_local(bands, sectors, k)
        wk = to_world(t, b, n, local)
        val = TWO_PI * qa.q[probe, k] * luminance(bsdf_f(mats, m, wk, wo, n)) * local[2]
        if val > best:
            best = val
    return best


@njit(cache=True, inline="always")
def continuation_value(qa, policy, probe, mats, m, wo, t, b, n, rng):
    if probe < 0:
        return 0.0
    if policy == Q_MAX:
        return qmax_target_k(qa, probe, mats, m, wo, t, b, n)
    return estimate_incident_k(qa, probe, mats, m, wo, t, b, n, rng)


@njit(cache=True, inline="always")
def learning_rate(alpha, visits):
    """Constant ``alpha`` when positive, otherwise 1 / (1 + visits)."""
    if alpha > 0.0:
        return alpha
    return 1.0 / (1.0 + visits)


@njit(cache=True, inline="always")
def blend(value, target, a):
    """``(1 - a) value + a target``, written so a constant target is reproduced exactly."""
    if a == 1.0:
        return target
    return value + a * (target - value)


@njit(cache=True)
def apply_q_update(qa, probe, k, target, alpha):
    a = learning_rate(alpha, qa.visits[probe, k])
    qa.q[probe, k] = blend(qa.q[probe, k], target, a)
    qa.visits[probe, k] += 1
    return qa.q[probe, k]


@njit(cache=True)
def rebuild_q(qa, mats, mode, floor_rel):
    bands, sectors = qa.bands, qa.sectors
    ns = bands * sectors
    w = np.empty(ns)
    f_cos = np.empty(ns)
    nrm = (0.0, 0.0, 1.0)
    for i in range(qa.q.shape[0]):
        if mode == PROPORTIONAL_Q_BSDF_COS:
            m = qa.probe_mat[i]
            for k in range(ns):
                local = stratum_center_local(bands, sectors, k)
                # material hint: outgoing direction along the probe normal
                f_cos[k] = luminance(bsdf_f(mats, m, local, nrm, nrm)) * local[2]
            for k in range(ns):
                w[k] = qa.q[i, k] * f_cos[k]
        else:
            for k in range(ns):
                w[k] = qa.q[i, k]
        fl = relative_floor(w, floor_rel)
        qa.floor[i] = fl
        qa.total[i] = fill_distribution(w, fl, qa.prob[i], qa.cdf[i])


@njit(cache=True, inline="always")
def sample_guided(qa, probe, t, b, n, u1, u2, u3):
    """Stratum from the probe CDF, then a uniform direction inside it.

    Returns ``(wi, pdf, k)`` with ``pdf = P(k) * n_strata / (2 pi)``.
    """
    ns = qa.bands * qa.sectors
    k = sample_cdf(qa.cdf[probe], u1)
    local = dir_in_stratum_local(qa.bands, qa.sectors, k, u2, u3)
    return to_world(t, b, n, local), qa.prob[probe, k] * ns / TWO_PI, k


@njit(cache=True)
def pdf_guided(qa, probe, t, b, n, wi):
    local = to_local(t, b, n, wi)
    if local[2] < 0.0:
        return 0.0
    k = stratum_of_local(qa.bands, qa.sectors, local)
    return qa.prob[probe, k] * qa.bands * qa.sectors / TWO_PI


# ---------------------------------------------------------------------------
# the Q field
# ---------------------------------------------------------------------------


def _build_index(pos: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    ext = np.maximum(hi - lo, 1e-3 * max(float(np.linalg.norm(hi - lo)), 1e-9))
    target_cells = max(pos.shape[0] / 2.0, 1.0)
    h = (float(np.prod(ext)) / target_cells) ** (1.0 / 3.0)
    res = np.clip(np.ceil(ext / h), 1, 64).astype(np.int64)
    cell = ext / res
    c = np.clip(((pos - lo) / cell).astype(np.int64), 0, res - 1)
    flat = (c[:, 0] * res[1] + c[:, 1]) * res[2] + c[:, 2]
    order = np.argsort(flat, kind="stable").astype(np.int64)
    counts = np.bincount(flat, minlength=int(np.prod(res)))
    start = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    return lo.astype(np.float64), cell.astype(np.float64), res, start, order


@dataclass
class QField:
    positions: np.ndarray
    normals: np.ndarray
    probe_mat: np.ndarray
    grid: HemisphereGrid
    normal_cos_min: float = 0.7
    policy: str = "expected_sarsa"
    sampling_mode: str = "proportional_q_bsdf_cos"
    alpha: float | str = "visits"
    floor_rel: float = 1e-4
    init_value: float = 1.0
    materials: MatArrays | None = None

    def __post_init__(self):
        if self.positions.shape[0] < 1:
            raise ValueError("a Q field needs at least one probe")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling mode {self.sampling_mode!r}")
        if not 0.0 < self.normal_cos_min < 1.0:
            raise ValueError("normal_cos_min must lie in (0, 1)")
        p, ns = self.positions.shape[0], self.grid.n
        self.q = np.full((p, ns), float(self.init_value))
        self.visits = np.zeros((p, ns), dtype=np.int64)
        self.prob = np.full((p, ns), 1.0 / ns)
        self.cdf = np.tile((np.arange(ns) + 1.0) / ns, (p, 1))
        self.cdf[:, -1] = 1.0
        self.floor = np.zeros(p)
        self.total = np.zeros(p)
        lo = self.positions.min(axis=0)
        hi = self.positions.max(axis=0)
        self._index = _build_index(self.positions, lo, hi)
        self._arrays = None

    @property
    def probe_count(self) -> int:
        return self.positions.shape[0]

    @property
    def alpha_value(self) -> float:
        """Kernel encoding of the schedule: constant alpha, or -1 for 1 / (1 + visits)."""
        return -1.0 if self.alpha == "visits" else float(self.alpha)

    @property
    def memory_bytes(self) -> int:
        return self.q.nbytes + self.visits.nbytes + self.prob.nbytes + self.cdf.nbytes

    def arrays(self) -> QArrays:
        if self._arrays is None:
            lo, cell, res, start, items = self._index
            self._arrays = QArrays(
                self.positions,
                self.normals,
                self.q,
                self.visits,
                self.prob,
                self.cdf,
                self.floor,
                self.total,
                self.probe_mat,
                int(self.grid.bands),
                int(self.grid.sectors),
                float(self.normal_cos_min),
                lo,
                cell,
                res,
                start,
                items,
            )
        return self._arrays

    def distribution_weights(self, probe: int) -> np.ndarray:
        return self.prob[probe] * self.total[probe]


def place_probes(
    scene,
    count: int,
    grid: HemisphereGrid = HemisphereGrid(),
    **kwargs,
) -> QField:
    """Probe ``i`` from Hammersley point ``(i / count, phi_2(i))``.

    The first coordinate picks a primitive through the area CDF and is then
    rescaled to [0, 1) inside that primitive's CDF interval; together with the
    radical inverse it gives an area-uniform point on the primitive.
    """
    if count < 1:
        raise ValueError("probe count must be >= 1")
    areas = scene.areas
    if areas.size == 0 or not areas.sum() > 0:
        raise ValueError("scene has no surface area to place probes on")
    cdf = np.cumsum(areas) / areas.sum()
    cdf[-1] = 1.0
    pos = np.empty((count, 3))
    nrm = np.empty((count, 3))
    mat = np.empty(count, dtype=np.int64)
    for i in range(count):
        u0 = i / count
        j = int(sample_cdf(cdf, u0))
        lo_c = cdf[j - 1] if j > 0 else 0.0
        u = min((u0 - lo_c) / (cdf[j] - lo_c), np.nextafter(1.0, 0.0))
        v = radical_inverse2(i)
        p, n = sample_point_on_primitive(scene.geom, j, u, v)
        pos[i], nrm[i] = p, n
        mat[i] = scene.primitives[j].material_id
    return QField(pos, nrm, mat, grid, materials=scene.mats, **kwargs)


def lookup(qfield: QField, y, normal) -> int | None:
    i = int(lookup_probe(qfield.arrays(), as_vec3(y), as_vec3(normal)))
    return None if i < 0 else i


def stratum_of(grid: HemisphereGrid, frame: Frame, direction) -> int:
    local = frame.to_local(direction)
    if local[2] < 0.0:
        raise ValueError("direction lies below the hemisphere of the frame")
    return int(stratum_of_local(grid.bands, grid.sectors, local))


def uniform_dir_in_stratum(grid: HemisphereGrid, frame: Frame, k: int, u: float, v: float) -> tuple[tuple, float]:
    if not 0 <= k < grid.n:
        raise ValueError(f"stratum {k} out of range [0, {grid.n})")
    local = dir_in_stratum_local(grid.bands, grid.sectors, k, u, v)
    return frame.to_world(local), grid.n / TWO_PI


def estimate_incident(qfield: QField, probe_id: int, wo, material: Material, frame: Frame, rng) -> float:
    mats = pack_materials([material])
    return float(
        estimate_incident_k(
            qfield.arrays(), probe_id, mats, 0, as_vec3(wo), frame.tangent, frame.bitangent, frame.normal, rng.state
        )
    )


def update_target(qfield: QField, omega, y_hit: Hit, material_at_y, rng) -> tuple[float, bool]:
    """Learning target ``lum(L_e(y, -omega)) + continuation`` for the segment x -> y.

    ``material_at_y`` is the :class:`Material` at ``y``, the scene's
    :class:`EnvironmentLight` for environment hits, or ``None`` when the ray
    escaped a scene without environment. Returns ``(target, y_had_probe)``.
    """
    omega = as_vec3(omega)
    wo = vscale(omega, -1.0)
    if y_hit.escaped:
        if y_hit.is_environment and isinstance(material_at_y, EnvironmentLight):
            return luminance(material_at_y.radiance(omega)), True
        return 0.0, True
    le = luminance(emitted(material_at_y, wo, y_hit.normal))
    ny = y_hit.normal if vdot(y_hit.normal, wo) > 0.0 else vscale(y_hit.normal, -1.0)
    fy = Frame.from_normal(ny)
    probe_y = int(lookup_probe(qfield.arrays(), as_vec3(y_hit.point), fy.normal))
    mats = pack_materials([material_at_y])
    cont = continuation_value(
        qfield.arrays(), POLICIES[qfield.policy], probe_y, mats, 0, wo, fy.tangent, fy.bitangent, fy.normal, rng.state
    )
    return le + cont, probe_y >= 0


def update(qfield: QField, x, x_normal, omega, y_hit: Hit, material_at_y, rng) -> float | None:
    """Apply one learning step to ``Q(x, omega)``; ``None`` when ``x`` has no probe."""
    fx = Frame.from_normal(x_normal)
    probe_x = lookup(qfield, x, fx.normal)
    if probe_x is None:
        return None
    k = stratum_of(qfield.grid, fx, omega)
    target, _ = update_target(qfield, omega, y_hit, material_at_y, rng)
    if not math.isfinite(target):
        raise ValueError(f"non-finite learning target {target}")
    return float(apply_q_update(qfield.arrays(), probe_x, k, target, qfield.alpha_value))


def rebuild_distributions(qfield: QField, materials=None) -> None:
    """Rebuild every probe CDF; ``materials`` are the scene's packed materials (hint for the BSDF weighting)."""
    mats = materials if materials is not None else qfield.materials
    if mats is None:
        # no hint: treat every probe as sitting on the default Lambertian
        mats = pack_materials([Material()])
        qfield.probe_mat[:] = 0
    rebuild_q(qfield.arrays(), mats, SAMPLING_MODES[qfield.sampling_mode], qfield.floor_rel)


def sample_direction(qfield: QField, probe_id: int, frame: Frame, u1: float, u2: float, u3: float) -> tuple[tuple, float]:
    wi, pdf, _ = sample_guided(qfield.arrays(), probe_id, frame.tangent, frame.bitangent, frame.normal, u1, u2, u3)
    return wi, float(pdf)


def pdf_direction(qfield: QField, probe_id: int, frame: Frame, direction) -> float:
    return float(
        pdf_guided(qfield.arrays(), probe_id, frame.tangent, frame.bitangent, frame.normal, as_vec3(direction))
    )


def dump_probes(qfield: QField, path) -> None:
    """One line per probe: position (3), normal (3), then the Q values."""
    with open(path, "w") as fh:
        for i in range(qfield.probe_count):
            vals = [*qfield.positions[i], *qfield.normals[i], *qfield.q[i]]
            fh.write(" ".join(f"{v:.9g}" for v in vals) + "\n")

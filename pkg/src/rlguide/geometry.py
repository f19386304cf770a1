"""Primitives, BVH construction and the ray/scene hitpoint function."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .core import as_vec3, row3, vadd, vcross, vdot, vnormalize, vscale, vsub

SPHERE, QUAD, TRIANGLE = 0, 1, 2
KIND_NAMES = {SPHERE: "sphere", QUAD: "quad", TRIANGLE: "triangle"}
INF = math.inf
STACK_SIZE = 64


@dataclass(frozen=True)
class Primitive:
    """A sphere, parallelogram ("quad") or triangle.

    ``data`` packs the shape: sphere ``center, radius``; quad ``corner, edge1,
    edge2``; triangle ``v0, v1, v2``. Quad and triangle normals follow the
    right-hand rule (``edge1 x edge2`` and ``(v1 - v0) x (v2 - v0)``).
    """

    kind: int
    data: tuple
    material_id: int

    @classmethod
    def sphere(cls, center, radius: float, material_id: int = 0) -> "Primitive":
        c = as_vec3(center)
        r = float(radius)
        if not (r > 0 and math.isfinite(r)):
            raise ValueError(f"sphere radius must be positive, got {radius}")
        return cls(SPHERE, c + (r, 0.0, 0.0, 0.0, 0.0, 0.0), int(material_id))

    @classmethod
    def quad(cls, corner, edge1, edge2, material_id: int = 0) -> "Primitive":
        p = cls(QUAD, as_vec3(corner) + as_vec3(edge1) + as_vec3(edge2), int(material_id))
        if not p.area > 1e-14:
            raise ValueError(f"degenerate quad with edges {edge1!r}, {edge2!r}")
        return p

    @classmethod
    def triangle(cls, v0, v1, v2, material_id: int = 0) -> "Primitive":
        p = cls(TRIANGLE, as_vec3(v0) + as_vec3(v1) + as_vec3(v2), int(material_id))
        if not p.area > 1e-14:
            raise ValueError(f"degenerate triangle {v0!r}, {v1!r}, {v2!r}")
        return p

    @property
    def kind_name(self) -> str:
        return KIND_NAMES[self.kind]

    def _cross(self):
        d = self.data
        if self.kind == QUAD:
            return vcross(d[3:6], d[6:9])
        return vcross(vsub(d[3:6], d[0:3]), vsub(d[6:9], d[0:3]))

    @property
    def area(self) -> float:
        if self.kind == SPHERE:
            return 4.0 * math.pi * self.data[3] ** 2
        c = self._cross()
        a = math.sqrt(vdot(c, c))
        return a if self.kind == QUAD else 0.5 * a

    @property
    def normal(self) -> tuple | None:
        """Unit geometric normal for planar shapes, ``None`` for spheres."""
        if self.kind == SPHERE:
            return None
        return vnormalize(self._cross())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        d = self.data
        if self.kind == SPHERE:
            c = np.array(d[0:3])
            return c - d[3], c + d[3]
        if self.kind == QUAD:
            p = np.array(d[0:3])
            e1, e2 = np.array(d[3:6]), np.array(d[6:9])
            pts = np.stack([p, p + e1, p + e2, p + e1 + e2])
        else:
            pts = np.array(d).reshape(3, 3)
        return pts.min(axis=0), pts.max(axis=0)

    def centroid(self) -> np.ndarray:
        d = self.data
        if self.kind == SPHERE:
            return np.array(d[0:3])
        if self.kind == QUAD:
            return np.array(d[0:3]) + 0.5 * (np.array(d[3:6]) + np.array(d[6:9]))
        return np.array(d).reshape(3, 3).mean(axis=0)


@dataclass(frozen=True)
class Ray:
    origin: tuple
    direction: tuple
    t_min: float = 0.0
    t_max: float = INF

    def __post_init__(self):
        o, d = as_vec3(self.origin), as_vec3(self.direction)
        length = math.sqrt(vdot(d, d))
        if abs(length - 1.0) > 1e-6:
            raise ValueError(f"ray direction must be unit length, got |d|={length}")
        if not (self.t_min >= 0 and self.t_min < self.t_max):
            raise ValueError(f"invalid ray interval [{self.t_min}, {self.t_max}]")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    point: tuple
    normal: tuple
    t: float
    primitive_id: int
    is_environment: bool = False

    @property
    def escaped(self) -> bool:
        """Missed every primitive (environment or not)."""
        return self.primitive_id < 0


class GeomArrays(NamedTuple):
    prim_type: np.ndarray
    prim_data: np.ndarray
    prim_normal: np.ndarray
    prim_mat: np.ndarray
    bvh_bmin: np.ndarray
    bvh_bmax: np.ndarray
    bvh_left: np.ndarray
    bvh_right: np.ndarray
    bvh_start: np.ndarray
    bvh_count: np.ndarray
    bvh_order: np.ndarray


@dataclass
class Bvh:
    """Flattened BVH. Node 0 is the root; a node is a leaf when ``left < 0``."""

    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @property
    def node_count(self) -> int:
        return self.bmin.shape[0]

    def leaf_primitives(self, node: int) -> np.ndarray:
        s = self.start[node]
        return self.order[s : s + self.count[node]]


def _surface_area(lo, hi):
    e = np.maximum(hi - lo, 0.0)
    return 2.0 * (e[..., 0] * e[..., 1] + e[..., 1] * e[..., 2] + e[..., 2] * e[..., 0])


def build_bvh(primitives: Sequence[Primitive], max_leaf: int = 4, bins: int = 16) -> Bvh:
    """Binned surface-area-heuristic BVH with a median split fallback."""
    n = len(primitives)
    if n == 0:
        raise ValueError("cannot build a BVH over an empty scene")
    lo = np.empty((n, 3))
    hi = np.empty((n, 3))
    for i, p in enumerate(primitives):
        lo[i], hi[i] = p.bounds()
    cen = 0.5 * (lo + hi)

    nodes_lo, nodes_hi, left, right, start, count = [], [], [], [], [], []
    order: list[int] = []

    def new_node():
        nodes_lo.append(None)
        nodes_hi.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(left) - 1

    def make_leaf(node, idx):
        start[node] = len(order)
        count[node] = len(idx)
        order.extend(int(i) for i in idx)

    # explicit stack; children are created before recursing so node 0 stays the root
    root = new_node()
    todo = [(root, np.arange(n))]
    while todo:
        node, idx = todo.pop()
        blo, bhi = lo[idx].min(axis=0), hi[idx].max(axis=0)
        nodes_lo[node], nodes_hi[node] = blo, bhi
        if len(idx) <= max_leaf:
            make_leaf(node, idx)
            continue
        clo, chi = cen[idx].min(axis=0), cen[idx].max(axis=0)
        axis = int(np.argmax(chi - clo))
        extent = chi[axis] - clo[axis]
        split = None
        if extent > 0:
            b = np.minimum(((cen[idx, axis] - clo[axis]) / extent * bins).astype(int), bins - 1)
            best_cost = INF
            parent_area = _surface_area(blo, bhi)
            for s in range(1, bins):
                lmask = b < s
                nl = int(lmask.sum())
                if nl == 0 or nl == len(idx):
                    continue
                li, ri = idx[lmask], idx[~lmask]
                cost = nl * _surface_area(lo[li].min(0), hi[li].max(0)) + (len(idx) - nl) * _surface_area(
                    lo[ri].min(0), hi[ri].max(0)
                )
                if cost < best_cost:
                    best_cost, split = cost, lmask
            if split is not None and best_cost >= len(idx) * parent_area and len(idx) <= 2 * max_leaf:
                make_leaf(node, idx)
                continue
        if split is None:
            # degenerate centroids: median split on index order along the axis
            srt = idx[np.argsort(cen[idx, axis], kind="stable")]
            half = len(srt) // 2
            li, ri = srt[:half], srt[half:]
        else:
            li, ri = idx[split], idx[~split]
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        todo.append((rnode, ri))
        todo.append((lnode, li))

    return Bvh(
        np.array(nodes_lo, dtype=np.float64),
        np.array(nodes_hi, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(start, dtype=np.int32),
        np.array(count, dtype=np.int32),
        np.array(order, dtype=np.int32),
    )


def empty_bvh() -> Bvh:
    """A single empty leaf whose inverted box rejects every ray."""
    return Bvh(
        np.full((1, 3), INF),
        np.full((1, 3), -INF),
        np.full(1, -1, dtype=np.int32),
        np.full(1, -1, dtype=np.int32),
        np.zeros(1, dtype=np.int32),
        np.zeros(1, dtype=np.int32),
        np.zeros(0, dtype=np.int32),
    )


def pack_geometry(primitives: Sequence[Primitive], bvh: Bvh) -> GeomArrays:
    n = len(primitives)
    kind = np.zeros(n, dtype=np.int32)
    data = np.zeros((n, 9))
    normal = np.zeros((n, 3))
    mat = np.zeros(n, dtype=np.int64)
    for i, p in enumerate(primitives):
        kind[i] = p.kind
        mat[i] = p.material_id
        data[i] = p.data
        if p.kind != SPHERE:
            normal[i] = p.normal
    return GeomArrays(kind, data, normal, mat, bvh.bmin, bvh.bmax, bvh.left, bvh.right, bvh.start, bvh.count, bvh.order)


# ---------------------------------------------------------------------------
# compiled intersection
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def hit_sphere(data, i, o, d, tmin, tmax):
    c = (data[i, 0], data[i, 1], data[i, 2])
    r = data[i, 3]
    oc = vsub(o, c)
    b = vdot(oc, d)
    cc = vdot(oc, oc) - r * r
    disc = b * b - cc
    if disc < 0.0:
        return INF
    sq = math.sqrt(disc)
    t = -b - sq
    if t <= tmin:
        t = -b + sq
    if t <= tmin or t >= tmax:
        return INF
    return t


@njit(cache=True, inline="always")
def hit_quad(data, normals, i, o, d, tmin, tmax):
    n = (normals[i, 0], normals[i, 1], normals[i, 2])
    denom = vdot(d, n)
    if abs(denom) < 1e-12:
        return INF
    p0 = (data[i, 0], data[i, 1], data[i, 2])
    t = vdot(vsub(p0, o), n) / denom
    if t <= tmin or t >= tmax:
        return INF
    e1 = (data[i, 3], data[i, 4], data[i, 5])
    e2 = (data[i, 6], data[i, 7], data[i, 8])
    w = vsub(vadd(o, vscale(d, t)), p0)
    nn = vcross(e1, e2)
    inv = 1.0 / vdot(nn, nn)
    a = vdot(nn, vcross(w, e2)) * inv
    b = vdot(nn, vcross(e1, w)) * inv
    if a < 0.0 or a > 1.0 or b < 0.0 or b > 1.0:
        return INF
    return t


@njit(cache=True, inline="always")
def hit_triangle(data, i, o, d, tmin, tmax):
    v0 = (data[i, 0], data[i, 1], data[i, 2])
    e1 = vsub((data[i, 3], data[i, 4], data[i, 5]), v0)
    e2 = vsub((data[i, 6], data[i, 7], data[i, 8]), v0)
    pv = vcross(d, e2)
    det = vdot(e1, pv)
    if abs(det) < 1e-14:
        return INF
    inv = 1.0 / det
    tv = vsub(o, v0)
    u = vdot(tv, pv) * inv
    if u < 0.0 or u > 1.0:
        return INF
    qv = vcross(tv, e1)
    v = vdot(d, qv) * inv
    if v < 0.0 or u + v > 1.0:
        return INF
    t = vdot(e2, qv) * inv
    if t <= tmin or t >= tmax:
        return INF
    return t


@njit(cache=True, inline="always")
def hit_primitive(g, i, o, d, tmin, tmax):
    k = g.prim_type[i]
    if k == SPHERE:
        return hit_sphere(g.prim_data, i, o, d, tmin, tmax)
    if k == QUAD:
        return hit_quad(g.prim_data, g.prim_normal, i, o, d, tmin, tmax)
    return hit_triangle(g.prim_data, i, o, d, tmin, tmax)


@njit(cache=True, inline="always")
def _slab(g, node, o, inv, tmin, tmax):
    for a in range(3):
        t0 = (g.bvh_bmin[node, a] - o[a]) * inv[a]
        t1 = (g.bvh_bmax[node, a] - o[a]) * inv[a]
        if t0 > t1:
            t0, t1 = t1, t0
        if t0 > tmin:
            tmin = t0
        if t1 < tmax:
            tmax = t1
        if tmin > tmax:
            return False
    return True


@njit(cache=True, inline="always")
def _safe_inv(x):
    if x == 0.0:
        return 1e300
    return 1.0 / x


@njit(cache=True, inline="always")
def trace_closest(g, o, d, tmin, tmax, stack):
    """Nearest primitive along the ray in ``(tmin, tmax)``: returns ``(t, prim)``; prim -1 on a miss."""
    inv = (_safe_inv(d[0]), _safe_inv(d[1]), _safe_inv(d[2]))
    best_t = tmax
    best = -1
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _slab(g, node, o, inv, tmin, best_t):
            continue
        if g.bvh_left[node] < 0:
            s = g.bvh_start[node]
            for j in range(s, s + g.bvh_count[node]):
                p = g.bvh_order[j]
                t = hit_primitive(g, p, o, d, tmin, best_t)
                if t < best_t:
                    best_t = t
                    best = p
        else:
            stack[sp] = g.bvh_right[node]
            stack[sp + 1] = g.bvh_left[node]
            sp += 2
    if best < 0:
        return INF, -1
    return best_t, best


@njit(cache=True, inline="always")
def trace_any(g, o, d, tmin, tmax, stack):
    """True if any primitive intersects the ray within ``(tmin, tmax)``."""
    inv = (_safe_inv(d[0]), _safe_inv(d[1]), _safe_inv(d[2]))
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _slab(g, node, o, inv, tmin, tmax):
            continue
        if g.bvh_left[node] < 0:
            s = g.bvh_start[node]
            for j in range(s, s + g.bvh_count[node]):
                if hit_primitive(g, g.bvh_order[j], o, d, tmin, tmax) < INF:
                    return True
        else:
            stack[sp] = g.bvh_right[node]
            stack[sp + 1] = g.bvh_left[node]
            sp += 2
    return False


@njit(cache=True)
def trace_closest_brute(g, o, d, tmin, tmax):
    best_t = tmax
    best = -1
    for p in range(g.prim_type.shape[0]):
        t = hit_primitive(g, p, o, d, tmin, best_t)
        if t < best_t:
            best_t = t
            best = p
    if best < 0:
        return INF, -1
    return best_t, best


@njit(cache=True, inline="always")
def geometric_normal(g, prim, p):
    if g.prim_type[prim] == SPHERE:
        c = (g.prim_data[prim, 0], g.prim_data[prim, 1], g.prim_data[prim, 2])
        return vscale(vsub(p, c), 1.0 / g.prim_data[prim, 3])
    return row3(g.prim_normal, prim)


@njit(cache=True, inline="always")
def offset_origin(p, n, d, eps):
    """Push ``p`` off the surface along ``n`` to the side ``d`` points into."""
    if vdot(d, n) >= 0.0:
        return vadd(p, vscale(n, eps))
    return vsub(p, vscale(n, eps))


@njit(cache=True, inline="always")
def segment_blocked(g, a, b, eps, stack):
    """Any primitive strictly between ``a`` and ``b`` (endpoint margins ``eps``)."""
    d = vsub(b, a)
    dist = math.sqrt(vdot(d, d))
    if dist <= 2.0 * eps:
        return False
    d = vscale(d, 1.0 / dist)
    return trace_any(g, a, d, eps, dist - eps, stack)


# ---------------------------------------------------------------------------
# Python entry points
# ---------------------------------------------------------------------------


def intersect(scene, ray: Ray) -> Hit:
    """First surface point hit by ``ray``; environment/escaped sentinel on a miss."""
    g = scene.geom
    stack = np.empty(STACK_SIZE, dtype=np.int32)
    t, prim = trace_closest(g, ray.origin, ray.direction, ray.t_min, ray.t_max, stack)
    if prim < 0:
        return Hit((0.0, 0.0, 0.0), ray.direction, INF, -1, scene.environment is not None)
    p = vadd(ray.origin, vscale(ray.direction, t))
    return Hit(p, geometric_normal(g, prim, p), t, int(prim), False)


def occluded(scene, a, b) -> bool:
    a, b = as_vec3(a), as_vec3(b)
    if a == b:
        raise ValueError("occlusion query needs two distinct points")
    stack = np.empty(STACK_SIZE, dtype=np.int32)
    return bool(segment_blocked(scene.geom, a, b, scene.eps, stack))

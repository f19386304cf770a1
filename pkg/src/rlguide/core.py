"""Shared math: vectors, frames, discrete distributions, sequences and RNG.

Vectors inside compiled kernels are plain ``(x, y, z)`` float tuples; numba
keeps them in registers. The Python-facing helpers accept any 3-sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

INV_PI = 1.0 / math.pi
TWO_PI = 2.0 * math.pi
LUMA = (0.2126, 0.7152, 0.0722)

# ---------------------------------------------------------------------------
# vector helpers (compiled)
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def vadd(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


@njit(cache=True, inline="always")
def vsub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@njit(cache=True, inline="always")
def vscale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


@njit(cache=True, inline="always")
def vmul(a, b):
    return (a[0] * b[0], a[1] * b[1], a[2] * b[2])


@njit(cache=True, inline="always")
def vdot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True, inline="always")
def vcross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


@njit(cache=True, inline="always")
def vlength(a):
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@njit(cache=True, inline="always")
def vnormalize(a):
    inv = 1.0 / math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
    return (a[0] * inv, a[1] * inv, a[2] * inv)


@njit(cache=True, inline="always")
def vmax(a):
    return max(a[0], max(a[1], a[2]))


@njit(cache=True, inline="always")
def luminance(c):
    return 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]


@njit(cache=True, inline="always")
def row3(arr, i):
    return (arr[i, 0], arr[i, 1], arr[i, 2])


@njit(cache=True, inline="always")
def onb(n):
    """Right-handed tangent/bitangent for unit normal ``n`` (Duff et al. 2017)."""
    sign = 1.0 if n[2] >= 0.0 else -1.0
    a = -1.0 / (sign + n[2])
    b = n[0] * n[1] * a
    t = (1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0])
    bt = (b, sign + n[1] * n[1] * a, -n[1])
    return t, bt


@njit(cache=True, inline="always")
def to_world(t, b, n, local):
    return (
        t[0] * local[0] + b[0] * local[1] + n[0] * local[2],
        t[1] * local[0] + b[1] * local[1] + n[1] * local[2],
        t[2] * local[0] + b[2] * local[1] + n[2] * local[2],
    )


@njit(cache=True, inline="always")
def to_local(t, b, n, w):
    return (vdot(w, t), vdot(w, b), vdot(w, n))


class Frame(NamedTuple):
    """Orthonormal shading frame; ``tangent x bitangent == normal``."""

    normal: tuple
    tangent: tuple
    bitangent: tuple

    @classmethod
    def from_normal(cls, normal: Sequence[float]) -> "Frame":
        n = as_vec3(normal)
        length = math.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
        if not math.isfinite(length) or length == 0.0:
            raise ValueError(f"cannot build a frame from normal {normal!r}")
        n = (n[0] / length, n[1] / length, n[2] / length)
        t, b = onb(n)
        return cls(n, t, b)

    def to_world(self, local: Sequence[float]) -> tuple:
        return to_world(self.tangent, self.bitangent, self.normal, as_vec3(local))

    def to_local(self, w: Sequence[float]) -> tuple:
        return to_local(self.tangent, self.bitangent, self.normal, as_vec3(w))


def as_vec3(v: Sequence[float]) -> tuple:
    x, y, z = (float(c) for c in v)
    if math.isnan(x) or math.isnan(y) or math.isnan(z):
        raise ValueError(f"NaN component in vector {v!r}")
    return (x, y, z)


# ---------------------------------------------------------------------------
# discrete distributions
# ---------------------------------------------------------------------------


@njit(cache=True)
def fill_distribution(weights, floor, prob, cdf):
    """Floor ``weights`` in place, write normalized ``prob`` and ``cdf``.

    Returns the total after flooring.
    """
    n = weights.shape[0]
    total = 0.0
    for i in range(n):
        if weights[i] < floor:
            weights[i] = floor
        total += weights[i]
    acc = 0.0
    for i in range(n):
        prob[i] = weights[i] / total
        acc += weights[i]
        cdf[i] = acc / total
    cdf[n - 1] = 1.0
    return total


@njit(cache=True)
def relative_floor(weights, rel):
    """Floor value ``rel * mean(weights)``; 1.0 when every weight is zero."""
    n = weights.shape[0]
    total = 0.0
    for i in range(n):
        total += weights[i]
    if total <= 0.0:
        return 1.0
    return rel * total / n


@njit(cache=True, inline="always")
def sample_cdf(cdf, u):
    """Smallest index ``i`` with ``cdf[i] > u`` (binary search)."""
    lo = 0
    hi = cdf.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@dataclass(frozen=True)
class DiscreteDistribution:
    weights: np.ndarray
    cdf: np.ndarray
    total: float
    floor: float

    @property
    def prob(self) -> np.ndarray:
        return self.weights / self.total

    def __len__(self) -> int:
        return self.weights.shape[0]


def build_distribution(weights: Sequence[float], floor: float) -> DiscreteDistribution:
    """Threshold ``weights`` at ``floor`` and build the sampling CDF."""
    w = np.array(weights, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise ValueError("cannot build a distribution from an empty weight array")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"non-finite weight at index {int(np.flatnonzero(~np.isfinite(w))[0])}")
    if np.any(w < 0):
        raise ValueError(f"negative weight at index {int(np.flatnonzero(w < 0)[0])}")
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    prob = np.empty_like(w)
    cdf = np.empty_like(w)
    total = fill_distribution(w, float(floor), prob, cdf)
    return DiscreteDistribution(w, cdf, total, float(floor))


def sample_distribution(d: DiscreteDistribution, u: float) -> tuple[int, float]:
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    i = int(sample_cdf(d.cdf, u))
    return i, float(d.weights[i] / d.total)


# ---------------------------------------------------------------------------
# low discrepancy
# ---------------------------------------------------------------------------


@njit(cache=True)
def radical_inverse2(i):
    """Van der Corput radical inverse in base 2 (bit reversal of a 32-bit index)."""
    bits = np.uint32(i)
    bits = (bits << np.uint32(16)) | (bits >> np.uint32(16))
    bits = ((bits & np.uint32(0x55555555)) << np.uint32(1)) | ((bits & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    bits = ((bits & np.uint32(0x33333333)) << np.uint32(2)) | ((bits & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    bits = ((bits & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | ((bits & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    bits = ((bits & np.uint32(0x00FF00FF)) << np.uint32(8)) | ((bits & np.uint32(0xFF00FF00)) >> np.uint32(8))
    return float(bits) * 2.3283064365386963e-10


def hammersley(i: int, n: int) -> tuple[float, float]:
    """Point ``i`` of the ``n``-point Hammersley set: ``(i/n, phi_2(i))``."""
    if n <= 0 or not 0 <= i < n:
        raise ValueError(f"need 0 <= i < n, got i={i}, n={n}")
    if n > 2**32:
        raise ValueError("Hammersley index limited to 32 bits")
    return i / n, float(radical_inverse2(i))


# ---------------------------------------------------------------------------
# hemisphere sampling
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def cosine_sample_local(u, v):
    """theta = arccos(sqrt(1 - u)), phi = 2 pi v; returns (dir, pdf) in the local frame."""
    cos_t = math.sqrt(1.0 - u)
    sin_t = math.sqrt(u)
    phi = TWO_PI * v
    d = (sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t)
    return d, cos_t * INV_PI


def cosine_sample_hemisphere(u: float, v: float) -> tuple[tuple, float]:
    if not (0.0 <= u < 1.0 and 0.0 <= v < 1.0):
        raise ValueError(f"(u, v) must lie in [0, 1)^2, got ({u}, {v})")
    d, pdf = cosine_sample_local(u, v)
    return d, pdf


# ---------------------------------------------------------------------------
# counter-based RNG
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def stream_key(seed, a, b):
    """Key for the stream identified by ``(seed, a, b)``, e.g. (seed, pixel, iteration)."""
    k = mix64(np.uint64(seed) + _GOLDEN)
    k = mix64(k ^ (np.uint64(a) * _GOLDEN + np.uint64(0x632BE59BD9B4E019)))
    k = mix64(k ^ (np.uint64(b) * _M1 + np.uint64(0x8CB92BA72F3D8DD7)))
    return k


@njit(cache=True, inline="always")
def rng_next(state):
    """Next uniform in [0, 1) from a ``uint64[2]`` (key, counter) state.

    Output ``n`` is ``mix64(key + n * golden)``: a splitmix64 stream that can
    be evaluated at any counter value independently.
    """
    state[1] += np.uint64(1)
    z = mix64(state[0] + state[1] * _GOLDEN)
    return float(z >> np.uint64(11)) * 1.1102230246251565e-16


class RngStream:
    """Reproducible uniform stream keyed by a 64-bit seed (and optional sub-keys)."""

    def __init__(self, seed: int, *subkeys: int) -> None:
        a = subkeys[0] if len(subkeys) > 0 else 0
        b = subkeys[1] if len(subkeys) > 1 else 0
        self.seed = int(seed)
        self.state = np.zeros(2, dtype=np.uint64)
        self.state[0] = stream_key(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF), np.uint64(a), np.uint64(b))

    @property
    def counter(self) -> int:
        return int(self.state[1])

    def uniform(self) -> float:
        return rng_next(self.state)

    def uniforms(self, n: int) -> np.ndarray:
        return _fill_uniforms(self.state, n)


@njit(cache=True)
def _fill_uniforms(state, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = rng_next(state)
    return out

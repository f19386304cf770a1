import math

import numpy as np
import pytest
from scipy import integrate, stats

from rlguide.core import Frame
from rlguide.geometry import Primitive
from rlguide.materials import AreaLight, EnvironmentLight, Material, bsdf_eval, bsdf_sample, emitted, light_sample
from rlguide.scene import Camera, Scene

UP = Frame.from_normal((0, 0, 1))
CAM = Camera((0, 0, 5), (0, 0, 0), (0, 1, 0), 40.0, 8, 8)


def unit_sphere_dirs(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_lambertian_eval_examples():
    white = Material((1, 1, 1))
    assert bsdf_eval(white, (0, 0, 1), (0, 0, 1), UP) == pytest.approx((1 / math.pi,) * 3)
    assert bsdf_eval(white, (0, 0, -1), (0, 0, 1), UP) == (0.0, 0.0, 0.0)


def test_lambertian_symmetric():
    m = Material((0.3, 0.6, 0.9))
    rng = np.random.default_rng(0)
    for a, b in zip(unit_sphere_dirs(rng, 200), unit_sphere_dirs(rng, 200)):
        assert bsdf_eval(m, a, b, UP) == bsdf_eval(m, b, a, UP)


@pytest.mark.parametrize("albedo", [(1, 1, 1), (0.25, 0.5, 0.75)])
def test_white_furnace_reflectance(albedo):
    m = Material(albedo)
    rng = np.random.default_rng(1)
    wo = (0.3, 0.1, math.sqrt(1 - 0.1))
    acc = np.zeros(3)
    n = 100_000
    for u, v in rng.random((n, 2)):
        wi, pdf, f = bsdf_sample(m, wo, UP, u, v)
        acc += np.array(f) * wi[2] / pdf
    assert acc / n == pytest.approx(albedo, rel=0.01)


@pytest.mark.parametrize("material", [Material((0.9, 0.9, 0.9)), Material((1, 1, 1), phong=20.0), Material((1, 1, 1), phong=2.0)])
def test_energy_conservation(material):
    rng = np.random.default_rng(2)
    wo = (math.sin(1.2), 0.0, math.cos(1.2))
    vals = []
    for u, v in rng.random((50_000, 2)):
        wi, pdf, f = bsdf_sample(material, wo, UP, u, v)
        vals.append(f[0] * max(wi[2], 0.0) / pdf if pdf > 0 else 0.0)
    vals = np.array(vals)
    assert vals.mean() <= 1.0 + 3 * vals.std() / math.sqrt(vals.size)


@pytest.mark.parametrize("material", [Material(), Material(phong=8.0)])
def test_sample_histogram_matches_pdf(material):
    """Chi-square of sampled (cos theta) bins against the pdf integrated per bin."""
    wo = (0.0, 0.0, 1.0)
    rng = np.random.default_rng(3)
    edges = np.linspace(0, 1, 11)
    counts = np.zeros(10)
    n = 40_000
    for u, v in rng.random((n, 2)):
        wi, pdf, _ = bsdf_sample(material, wo, UP, u, v)
        if pdf > 0 and wi[2] > 0:
            counts[min(int(wi[2] * 10), 9)] += 1
    e = material.phong
    # with wo along the normal both lobes are cos^k about the normal: density (k+1)/(2pi) c^k
    k = e if e > 0 else 1.0
    expected = np.array([n * (b ** (k + 1) - a ** (k + 1)) for a, b in zip(edges[:-1], edges[1:])])
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < stats.chi2.ppf(0.999, 9)


def test_emitted_examples():
    lamp = Material((0, 0, 0), emission=(1, 1, 1))
    assert emitted(lamp, (0, 0, 1), (0, 0, 1)) == (1, 1, 1)
    assert emitted(lamp, (0, 0, -1), (0, 0, 1)) == (0, 0, 0)
    sky = EnvironmentLight.uniform((0.2, 0.3, 0.4))
    for d in unit_sphere_dirs(np.random.default_rng(4), 20):
        assert emitted(sky, d) == pytest.approx((0.2, 0.3, 0.4))


def test_material_validation():
    with pytest.raises(ValueError):
        Material((1.2, 0.5, 0.5))
    with pytest.raises(ValueError):
        Material(emission=(float("inf"), 0, 0))
    with pytest.raises(ValueError):
        EnvironmentLight(np.full((2, 2, 3), -1.0))


def test_lattice_texels_equal_solid_angle():
    lat = np.zeros((4, 8, 3))
    lat[..., 0] = np.arange(32).reshape(4, 8)
    env = EnvironmentLight(lat)
    d = unit_sphere_dirs(np.random.default_rng(5), 64_000)
    idx = np.array([env.radiance(x)[0] for x in d]).astype(int)
    counts = np.bincount(idx, minlength=32)
    assert stats.chisquare(counts).pvalue > 1e-3


def _light_scene(size):
    lamp = Primitive.quad((-size / 2, 1, -size / 2), (size, 0, 0), (0, 0, size), 1)
    mats = [Material((0.5, 0.5, 0.5)), Material((0, 0, 0), emission=(2, 2, 2))]
    return Scene(CAM, mats, [lamp])


def test_light_sample_pdf():
    assert light_sample(AreaLight(0, (1, 1, 1), 1.0), _light_scene(1.0), (0, 0, 0), 0.3, 0.7)[2] == 1.0
    sc = _light_scene(2.0)
    light = sc.lights[0]
    assert light.area == pytest.approx(4.0)
    p, n, pdf = light_sample(light, sc, (0, 0, 0), 0.3, 0.7)
    assert pdf == pytest.approx(0.25)
    assert n == pytest.approx((0, -1, 0))
    assert -1 <= p[0] <= 1 and p[1] == pytest.approx(1.0)


def test_direct_light_estimate_matches_quadrature():
    """Area-sampled estimate of the radiance reflected at x below a square lamp."""
    size, h = 1.0, 1.0
    sc = _light_scene(size)
    light = sc.lights[0]
    rho, le = 0.5, 2.0

    def integrand(z, x):
        r2 = x * x + z * z + h * h
        return h * h / (r2 * r2)

    ff, _ = integrate.dblquad(integrand, -size / 2, size / 2, -size / 2, size / 2)
    exact = rho / math.pi * le * ff
    rng = np.random.default_rng(6)
    acc = 0.0
    n = 100_000
    for u, v in rng.random((n, 2)):
        p, nl, pdf = light_sample(light, sc, (0, 0, 0), u, v)
        d = np.array(p)
        r2 = d @ d
        w = d / math.sqrt(r2)
        cos_x = w[1]
        cos_l = -np.dot(nl, w)
        acc += rho / math.pi * le * cos_x * cos_l / r2 / pdf
    assert acc / n == pytest.approx(exact, rel=0.01)

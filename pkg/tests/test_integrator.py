import math

import numpy as np
import pytest
from scipy import integrate

from rlguide.core import RngStream
from rlguide.guiding import HemisphereGrid, place_probes
from rlguide.integrator import MODES, RenderConfig, next_event, render, trace_path
from rlguide.td_select import LightSelectionGrid, select_light, shading_cell

from scenes import make_scene, quad

MATS = [{"name": "white", "albedo": [0.5, 0.5, 0.5]}, {"name": "lamp", "albedo": [0, 0, 0], "emission": [2, 2, 2]}]


def lamp_over_floor(lamps=((-0.5, -0.5),), size=1.0, blocker=None):
    prims = [quad((-3, 0, -3), (0, 0, 6), (6, 0, 0))]
    for x, z in lamps:
        prims.append(quad((x, 1, z), (size, 0, 0), (0, 0, size), "lamp"))
    if blocker is not None:
        prims.append(quad(*blocker))
    cam = {"position": [0, 0.5, 2.5], "look_at": [0, 0.3, 0], "fov": 50, "width": 12, "height": 12}
    return make_scene(prims, materials=MATS, camera=cam)


def form_factor(x0, x1, z0, z1, h):
    """Point at the origin facing +y, parallel rectangle at height h."""
    val, _ = integrate.dblquad(lambda z, x: h * h / (x * x + z * z + h * h) ** 2 / math.pi, x0, x1, z0, z1)
    return val


# --- path tracing basics ----------------------------------------------------------


def test_camera_ray_on_emitter():
    sc = lamp_over_floor()
    rad, length, nonzero = trace_path(sc, None, None, ((0, 0.5, 0), (0, 1, 0)), RngStream(1), RenderConfig())
    assert rad == pytest.approx((2, 2, 2))
    assert length == 1 and nonzero


def test_scene_without_lights_is_black():
    sc = make_scene([quad((-1, 0, -1), (0, 0, 2), (2, 0, 0))])
    for mode in ("bsdf", "nee_td", "rl"):
        img, stats = render(sc, RenderConfig(mode=mode, iterations=2, probe_count=16))
        assert not img.any()
        assert stats.nonzero_fraction == 0.0


def test_zero_iterations():
    sc = lamp_over_floor()
    img, stats = render(sc, RenderConfig(iterations=0))
    assert img.shape == (12, 12, 3) and not img.any()
    assert stats.paths == 0 and stats.nonzero_fraction == 0.0 and stats.avg_path_length == 0.0


@pytest.mark.parametrize("mode", sorted(MODES))
def test_small_furnace_mean(mode, bundled):
    img, stats = render(bundled("furnace"), RenderConfig(mode=mode, iterations=32, width=24, height=24, seed=3))
    # pixels fully covered by the sphere
    ys, xs = np.mgrid[0:24, 0:24]
    inside = (xs - 11.5) ** 2 + (ys - 11.5) ** 2 < 7**2
    assert img[inside].mean() == pytest.approx(1.0, rel=0.01)
    assert stats.accumulator.nan_paths == 0


def test_config_validation():
    for bad in (
        dict(mode="nope"),
        dict(width=0),
        dict(max_depth=0),
        dict(iterations=-1),
        dict(strata=(0, 4)),
        dict(grid=(1, 1)),
        dict(floor=0.0),
        dict(alpha=1.5),
        dict(threads=-1),
    ):
        with pytest.raises(ValueError):
            RenderConfig(**bad)


def test_deterministic_and_thread_independent(bundled):
    sc = bundled("cornell")
    cfg = RenderConfig(mode="rl_nee_td", iterations=4, width=20, height=20, probe_count=64, seed=5)
    a, sa = render(sc, cfg.with_(deterministic=True))
    b, _ = render(sc, cfg.with_(deterministic=True))
    c, sc_ = render(sc, cfg.with_(threads=3))
    assert np.array_equal(a, b)
    assert np.array_equal(a, c)
    assert sa.accumulator.q_updates == sc_.accumulator.q_updates


def test_stats_counters_and_csv(tmp_path, bundled):
    sc = bundled("cornell")
    img, stats = render(sc, RenderConfig(mode="rl", iterations=3, width=16, height=16, probe_count=32))
    assert stats.paths == 3 * 256
    assert [it.iteration for it in stats.iterations] == [0, 1, 2]
    assert sum(it.nonzero_paths for it in stats.iterations) == stats.accumulator.paths_nonzero
    assert stats.avg_path_length >= 1.0
    path = tmp_path / "s.csv"
    stats.write_csv(path)
    lines = path.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    assert "# mode=rl" in header and "# probe_count=32" in header and "# width=16" in header
    rows = [l for l in lines if not l.startswith("#")]
    assert rows[0] == "iteration,paths,nonzero_paths,avg_path_length,ms_elapsed"
    assert len(rows) == 4


def test_variance_of_mean_scales_inverse_n(bundled):
    sc = bundled("cornell")
    cfg = RenderConfig(iterations=16, width=16, height=16, seed=2)
    _, s16 = render(sc, cfg)
    _, s64 = render(sc, cfg.with_(iterations=64))
    ratio = s16.accumulator.variance_of_mean().sum() / s64.accumulator.variance_of_mean().sum()
    assert ratio == pytest.approx(4.0, rel=0.25)


def test_freeze_stops_learning(bundled):
    sc = bundled("cornell")
    cfg = RenderConfig(mode="rl", iterations=2, width=12, height=12, probe_count=32, seed=1)
    _, s2 = render(sc, cfg)
    _, s4 = render(sc, cfg.with_(iterations=4, freeze_after=2))
    assert s4.accumulator.q_updates == s2.accumulator.q_updates
    assert np.array_equal(s4.qfield.q, s2.qfield.q)


def test_max_depth_one_sees_only_emitters():
    sc = lamp_over_floor()
    img, _ = render(sc, RenderConfig(iterations=1, max_depth=1))
    assert set(np.unique(img)) <= {0.0, 2.0}


def test_guided_mode_needs_q_field():
    with pytest.raises(ValueError):
        trace_path(lamp_over_floor(), None, None, ((0, 0.5, 0), (0, -1, 0)), RngStream(1), RenderConfig(mode="rl"))


def test_trace_path_updates_given_q_field():
    sc = lamp_over_floor()
    q = place_probes(sc, 64, HemisphereGrid(4, 8))
    rng = RngStream(3)
    for _ in range(50):
        trace_path(sc, q, None, ((0, 0.5, 0.3), (0, -1, 0)), rng, RenderConfig(mode="rl"))
    assert q.visits.sum() > 0


# --- next event estimation ------------------------------------------------------


def nee_mean(sc, grid, n=100_000, learn=False):
    rng = RngStream(9)
    acc = np.zeros(3)
    for _ in range(n):
        acc += next_event(sc, grid, (0, 0, 0), (0, 1, 0), 0, (0, 1, 0), rng, learn=learn)
    return acc / n


def test_single_light_matches_quadrature():
    sc = lamp_over_floor()
    exact = 0.5 * 2.0 * form_factor(-0.5, 0.5, -0.5, 0.5, 1.0)
    assert nee_mean(sc, None)[0] == pytest.approx(exact, rel=0.01)


def test_two_lights_unbiased_for_any_learned_state():
    sc = lamp_over_floor(lamps=((-1.2, -0.5), (0.6, -0.2)), size=0.8)
    exact = 0.5 * 2.0 * (form_factor(-1.2, -0.4, -0.5, 0.3, 1.0) + form_factor(0.6, 1.4, -0.2, 0.6, 1.0))
    grid = LightSelectionGrid.for_scene(sc, (2, 2, 2))
    c = shading_cell(grid, (0, 0, 0), (0, 1, 0))
    grid.values[c] = [4.0, 1.0]
    grid.visits[c] = [1, 1]
    grid.rebuild()
    assert grid.prob[c, 0] == pytest.approx(0.8, abs=1e-3)
    rng = RngStream(9)
    xs = np.array([next_event(sc, grid, (0, 0, 0), (0, 1, 0), 0, (0, 1, 0), rng, learn=False)[0] for _ in range(200_000)])
    assert abs(xs.mean() - exact) < 4 * xs.std() / math.sqrt(xs.size)
    assert xs.mean() == pytest.approx(exact, rel=0.01)


def test_fully_occluded_light_contributes_nothing_and_decays():
    blocker = ((-2, 0.5, -2), (0, 0, 4), (4, 0, 0))
    sc = lamp_over_floor(blocker=blocker)
    grid = LightSelectionGrid.for_scene(sc, (1, 1, 1), alpha=0.5)
    grid.values[0, 0] = 1.0
    grid.visits[0, 0] = 1
    out = [next_event(sc, grid, (0, 0, 0), (0, 1, 0), 0, (0, 1, 0), RngStream(i)) for i in range(5)]
    assert all(o == (0.0, 0.0, 0.0) for o in out)
    assert grid.values[0, 0] == pytest.approx(0.5**5)


def test_occluded_light_selection_tends_to_floor_share():
    # a wall at x = 0.3 hides the right lamp from the receiver point
    blocker = ((0.3, 0.001, -3), (0, 2, 0), (0, 0, 6))
    sc = lamp_over_floor(lamps=((-1.2, -0.5), (0.6, -0.5)), size=1.0, blocker=blocker)
    grid = LightSelectionGrid.for_scene(sc, (1, 1, 1))
    rng = RngStream(4)
    for it in range(40):
        for _ in range(50):
            next_event(sc, grid, (0, 0, 0), (0, 1, 0), 0, (0, 1, 0), rng)
        grid.rebuild()
    share = grid.floor_share(0)
    assert grid.prob[0, 1] == pytest.approx(share, rel=1e-9)
    u = np.random.default_rng(0).random(20_000)
    freq = np.mean([select_light(grid, 0, x)[0] == 0 for x in u])
    assert freq == pytest.approx(1 - share, abs=1e-3)

"""Exit criteria: analytic identities plus scaled-down rendering experiments.

Every test carries a ``criterion`` marker; a one-line pass/fail summary per
criterion is printed at the end of the run. Reference images are cached
under ``$RLGUIDE_CACHE`` so repeated runs only pay for the experiments.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlguide.core import Frame, RngStream
from rlguide.diagnostics import ergodicity_sweep, reference_image, rmse
from rlguide.geometry import Hit
from rlguide.guiding import HemisphereGrid, QField, apply_q_update, estimate_incident, stratum_of, update
from rlguide.integrator import BASELINE_MODES, MODES, RenderConfig, render
from rlguide.materials import Material
from rlguide.presets import config_for
from rlguide.td_select import SelectionGrid, update_value

pytestmark = [pytest.mark.acceptance]

UP = Frame.from_normal((0, 1, 0))
REF_SEED = 12345

# stats of every learning run, swept for ergodicity at the end
LEARNING_RUNS: list = []


def keep(stats):
    if stats.qfield is not None or stats.light_grid is not None or stats.config.mode == "env_rl":
        LEARNING_RUNS.append(stats)
    return stats


def single_probe(grid=HemisphereGrid(8, 16), **kw):
    return QField(np.zeros((1, 3)), np.array([[0.0, 1.0, 0.0]]), np.zeros(1, dtype=np.int64), grid, **kw)


def value_grid(alpha="visits", actions=2):
    return SelectionGrid(np.zeros(3), np.ones(3), (1, 1, 1), actions, alpha=alpha)


# --- 1: furnace -------------------------------------------------------------------


def furnace_render(scene, mode):
    cam = scene.camera
    assert (cam.width, cam.height) == (128, 128)
    t0 = time.perf_counter()
    img, stats = render(scene, RenderConfig(mode=mode, iterations=1024, threads=1, seed=1))
    seconds = time.perf_counter() - t0
    # pixels whose whole footprint lies on the unit sphere seen from distance 4
    disk = math.tan(math.asin(1 / 4)) / math.tan(math.radians(cam.fov / 2)) * cam.height / 2
    ys, xs = np.mgrid[0 : cam.height, 0 : cam.width]
    inside = np.hypot(xs + 0.5 - cam.width / 2, ys + 0.5 - cam.height / 2) < disk - 1.0
    assert inside.sum() > 5000
    return img, stats, inside, seconds


@pytest.mark.slow
@pytest.mark.criterion(1, "furnace identity, 128x128, 1024 spp, all modes within 2%")
@pytest.mark.parametrize("mode", sorted(set(MODES) - set(BASELINE_MODES)))
def test_furnace_identity(bundled, mode, record_property):
    img, stats, inside, seconds = furnace_render(bundled("furnace"), mode)
    keep(stats)
    err = np.abs(img[inside] - 1.0).max()
    record_property(mode, f"maxerr {err:.4f} {seconds:.0f}s")
    assert err <= 0.02
    assert seconds < 120.0


@pytest.mark.slow
@pytest.mark.parametrize("mode", BASELINE_MODES)
def test_furnace_baselines_unbiased(bundled, mode):
    """The fixed-strategy baselines are unbiased in the furnace.

    ``env_is`` spreads its tile samples over the whole sphere, so at 1024
    spp its per-pixel noise is around 1% and the 2% bound does not apply.
    """
    img, stats, inside, _ = furnace_render(bundled("furnace"), mode)
    sigma = np.sqrt(stats.accumulator.variance_of_mean()[inside])
    diff = img[inside] - 1.0
    assert abs(diff.mean()) < 0.002
    # without lights nee_uniform is plain BSDF sampling, exact up to rounding
    noisy = sigma > 1e-9
    assert np.all(np.abs(diff[~noisy]) < 1e-9)
    z = diff[noisy] / sigma[noisy]
    assert z.size == 0 or np.mean(np.abs(z) > 3) <= 0.01


# --- 2: unbiasedness with frozen guiding --------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion(2, "frozen rl agrees with bsdf per pixel within 3 sigma, door 4096 spp")
def test_frozen_guiding_is_unbiased(bundled, record_property):
    sc = bundled("door")
    base = config_for(sc, iterations=4096)
    a, sa = render(sc, base.with_(mode="rl", freeze_after=16, seed=3))
    b, sb = render(sc, base.with_(mode="bsdf", seed=4))
    keep(sa)
    assert a.shape[:2] == (64, 64)
    va = sa.accumulator.variance_of_mean()
    vb = sb.accumulator.variance_of_mean()
    var = va + vb
    live = var > 0
    z = (a - b)[live] / np.sqrt(var[live])
    outside = float(np.mean(np.abs(z) > 3))
    global_z = float((a - b).sum() / np.sqrt(var.sum()))
    record_property("frac_|z|>3", f"{outside:.4f}")
    record_property("global_z", f"{global_z:.2f}")
    # a Gaussian puts 0.27% of pixel-channels beyond 3 sigma by chance
    assert outside <= 0.01
    assert abs(global_z) < 3.0


# --- 3: running mean -----------------------------------------------------------------


@pytest.mark.criterion(3, "visit-count schedule reproduces a constant target exactly")
@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e6, allow_subnormal=False), st.floats(0, 1e6), st.integers(1, 300))
def test_running_mean_constant_target(t, start, n):
    q = single_probe(HemisphereGrid(2, 2))
    q.q[0, 1] = start
    qa = q.arrays()
    g = value_grid()
    g.values[0, 0] = start
    for _ in range(n):
        apply_q_update(qa, 0, 1, t, q.alpha_value)
        update_value(g, 0, 0, (t, 0.0, 0.0))
        assert q.q[0, 1] == t
        assert g.values[0, 0] == t


@pytest.mark.criterion(3, "visit-count schedule reproduces a constant target exactly")
def test_running_mean_of_varying_targets():
    q = single_probe(HemisphereGrid(2, 2))
    qa = q.arrays()
    targets = np.random.default_rng(3).uniform(0, 10, 1000)
    for t in targets:
        apply_q_update(qa, 0, 0, t, q.alpha_value)
    assert q.q[0, 0] == pytest.approx(targets.mean(), rel=1e-12)


# --- 4: update arithmetic ----------------------------------------------------------


@pytest.mark.criterion(4, "learning updates match hand-computed values to 1e-12")
def test_expected_sarsa_update_examples():
    lamp = Material((0, 0, 0), emission=(1, 1, 1))
    hit = Hit((0.0, 1.0, 0.0), (0.0, -1.0, 0.0), 1.0, 0)
    q = single_probe(alpha=1.0)
    q.q[:] = 0.0
    assert update(q, (0, 0, 0), (0, 1, 0), (0, 1, 0), hit, lamp, RngStream(1)) == pytest.approx(1.0, abs=1e-12)
    q = single_probe(alpha=0.5)
    q.q[:] = 2.0
    k = stratum_of(q.grid, UP, (0, 1, 0))
    assert apply_q_update(q.arrays(), 0, k, 1.0, 0.5) == pytest.approx(1.5, abs=1e-12)


@pytest.mark.criterion(4, "learning updates match hand-computed values to 1e-12")
def test_max_update_example():
    # x looks up at a ceiling probe; bands are equal in cos: centers 0.25 and 0.75
    grid = HemisphereGrid(2, 1)
    pos = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    nrm = np.array([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])
    q = QField(pos, nrm, np.zeros(2, dtype=np.int64), grid, policy="q_max", alpha=0.5)
    q.q[0] = 1.0
    q.q[1] = [4.0, 1.0]
    ceiling = Hit((0.0, 1.0, 0.0), (0.0, -1.0, 0.0), 1.0, 0)
    grey = Material((0.8, 0.8, 0.8))
    # max(2 pi * 4 * 0.8/pi * 0.25, 2 pi * 1 * 0.8/pi * 0.75) = max(1.6, 1.2)
    got = update(q, (0, 0, 0), (0, 1, 0), (0, 1, 0), ceiling, grey, RngStream(1))
    assert got == pytest.approx(0.5 * 1.0 + 0.5 * 1.6, abs=1e-12)


@pytest.mark.criterion(4, "learning updates match hand-computed values to 1e-12")
def test_value_update_examples():
    g = value_grid(alpha=1.0)
    assert update_value(g, 0, 0, (0.5, 0.2, 0.1)) == pytest.approx(0.5, abs=1e-12)
    g = value_grid(alpha=0.5)
    g.values[0, 0] = 0.5
    assert update_value(g, 0, 0, (0.0, 0.0, 0.0)) == pytest.approx(0.25, abs=1e-12)


# --- 5: estimator expectation ---------------------------------------------------------


@pytest.mark.criterion(5, "estimate_incident mean is albedo * c within 1% over 1e5 trials")
@pytest.mark.parametrize("albedo,c", [(1.0, 1.0), (0.5, 3.0), (0.8, 0.25)])
def test_estimator_expectation(albedo, c, record_property):
    q = single_probe()
    q.q[:] = c
    rng = RngStream(11)
    mat = Material((albedo, albedo, albedo))
    mean = np.mean([estimate_incident(q, 0, (0, 1, 0), mat, UP, rng) for _ in range(100_000)])
    record_property(f"rho={albedo},c={c}", f"{mean / (albedo * c):.5f}")
    assert mean == pytest.approx(albedo * c, rel=0.01)


# --- 6-8: door experiments ----------------------------------------------------------


@pytest.fixture(scope="module")
def door_runs(bundled):
    sc = bundled("door")
    cfg = config_for(sc, iterations=64, seed=0)
    ref = reference_image(sc, cfg, 4096, seed=REF_SEED)
    out = {}
    for mode in ("bsdf", "rl", "rl_max"):
        t0 = time.perf_counter()
        img, stats = render(sc, cfg.with_(mode=mode))
        out[mode] = dict(img=img, stats=keep(stats), rmse=rmse(img, ref), seconds=time.perf_counter() - t0)
    return out


@pytest.mark.slow
@pytest.mark.criterion(6, "door 64 spp: rl nonzero fraction >= 2x bsdf and lower RMSE")
def test_guiding_efficiency(door_runs, record_property):
    rl, bs = door_runs["rl"], door_runs["bsdf"]
    record_property("nonzero", f"rl {rl['stats'].nonzero_fraction:.4f} bsdf {bs['stats'].nonzero_fraction:.4f}")
    record_property("rmse", f"rl {rl['rmse']:.4f} bsdf {bs['rmse']:.4f}")
    assert rl["stats"].nonzero_fraction >= 2 * bs["stats"].nonzero_fraction
    assert rl["rmse"] < bs["rmse"]
    assert rl["seconds"] + bs["seconds"] < 300


@pytest.mark.slow
@pytest.mark.criterion(7, "door 64 spp: rl average path length below bsdf")
def test_path_length_direction(door_runs, record_property):
    rl, bs = door_runs["rl"]["stats"], door_runs["bsdf"]["stats"]
    record_property("avg_len", f"rl {rl.avg_path_length:.3f} bsdf {bs.avg_path_length:.3f}")
    record_property("reduction", f"{1 - rl.avg_path_length / bs.avg_path_length:.1%}")
    assert rl.avg_path_length < bs.avg_path_length


@pytest.mark.slow
@pytest.mark.criterion(8, "door 64 spp: expected-SARSA RMSE <= max-policy RMSE")
def test_expected_sarsa_beats_max(door_runs, record_property):
    record_property("rmse", f"rl {door_runs['rl']['rmse']:.4f} rl_max {door_runs['rl_max']['rmse']:.4f}")
    assert door_runs["rl"]["rmse"] <= door_runs["rl_max"]["rmse"]


# --- 9: light selection ---------------------------------------------------------------


def sealed_lights(scene) -> np.ndarray:
    """Indices of the lamps inside the closed box (their quads sit below y = 0.8)."""
    return np.array([i for i, l in enumerate(scene.lights) if scene.primitives[l.primitive_id].data[1] < 0.8])


@pytest.mark.slow
@pytest.mark.criterion(9, "manylights: nee_td beats uniform NEE at 16 spp; sealed lights < 2x floor share")
def test_td_light_selection(bundled, record_property):
    sc = bundled("manylights")
    occ = sealed_lights(sc)
    assert len(sc.lights) == 64 and len(occ) == 32
    cfg = config_for(sc, iterations=16, seed=0)
    ref = reference_image(sc, cfg, 1024, seed=REF_SEED, mode="nee_uniform")
    uni, _ = render(sc, cfg.with_(mode="nee_uniform"))
    td, _ = render(sc, cfg.with_(mode="nee_td"))
    e_uni, e_td = rmse(uni, ref), rmse(td, ref)
    record_property("rmse", f"nee_td {e_td:.4f} nee_uniform {e_uni:.4f}")

    _, stats = render(sc, cfg.with_(mode="nee_td", iterations=32))
    keep(stats)
    g = stats.light_grid
    weight = g.visits.sum(axis=1).astype(float)
    used = weight > 0
    occ_prob = g.prob[:, occ].sum(axis=1)
    floor_share = len(occ) * g.floor / np.where(g.total > 0, g.total, 1.0)
    ratio = float((weight * occ_prob)[used].sum() / (weight * floor_share)[used].sum())
    record_property("sealed/floor", f"{ratio:.3f}")
    assert e_td < e_uni
    assert ratio < 2.0


# --- 10: environment tiles -----------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion(10, "sunsky: env_rl RMSE below brightness-proportional env sampling")
def test_env_tile_learning(bundled, record_property):
    sc = bundled("sunsky")
    cfg = config_for(sc, iterations=64, seed=7)
    ref = reference_image(sc, cfg, 4096, seed=REF_SEED, mode="env_is")
    a, _ = render(sc, cfg.with_(mode="env_is"))
    b, stats = render(sc, cfg.with_(mode="env_rl"))
    keep(stats)
    e_is, e_rl = rmse(a, ref), rmse(b, ref)
    record_property("rmse", f"env_rl {e_rl:.4f} env_is {e_is:.4f}")
    assert e_rl < e_is


# --- 11: determinism -------------------------------------------------------------------


@pytest.mark.criterion(11, "--deterministic --seed S gives bit-identical PFM files")
@pytest.mark.parametrize(
    "args",
    [
        ["--scene", "furnace", "--mode", "bsdf", "--spp", "16", "--width", "32", "--height", "32"],
        ["--scene", "door", "--mode", "rl", "--spp", "8", "--width", "32", "--height", "32"],
        ["--scene", "manylights", "--mode", "rl_nee_td", "--spp", "4", "--width", "24", "--height", "24"],
    ],
)
def test_cli_determinism(tmp_path, args):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}.pfm"
        cmd = [sys.executable, "-m", "rlguide", *args, "--deterministic", "--seed", "1", "--out", str(out)]
        r = subprocess.run(cmd, capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


# --- 12: ergodicity -------------------------------------------------------------------


@pytest.mark.criterion(12, "every probe stratum and (cell, light) pair keeps its floor share")
def test_ergodicity_after_runs(bundled, record_property):
    runs = list(LEARNING_RUNS)
    if not runs:
        # run on its own: sweep a short learning run of each kind
        for name, mode in (("door", "rl"), ("manylights", "rl_nee_td"), ("sunsky", "env_rl")):
            sc = bundled(name)
            runs.append(render(sc, config_for(sc, mode=mode, iterations=8, width=32, height=32))[1])
    checked = 0
    for stats in runs:
        rep = ergodicity_sweep(stats)
        checked += rep.checked
        assert rep.ok, (stats.scene, stats.config.mode, rep)
    record_property("runs", len(runs))
    record_property("entries", checked)

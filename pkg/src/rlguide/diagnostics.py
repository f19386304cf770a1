"""Evaluation helpers: RMSE, mode comparison at equal path budget, ergodicity sweep.

Reference images for comparisons are long renders in a non-learning mode
(``bsdf`` unless asked otherwise), cached on disk under ``$RLGUIDE_CACHE``
(default ``~/.cache/rlguide``) and keyed by the scene hash, mode,
resolution, path depth, budget and seed.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .integrator import RenderConfig, RenderStats, render
from .io import scene_hash


def rmse(image_a, image_b) -> float:
    """Root-mean-square difference over all pixels and channels."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((a - b) ** 2)))


def cache_dir() -> Path:
    return Path(os.environ.get("RLGUIDE_CACHE", Path.home() / ".cache" / "rlguide"))


REFERENCE_MODES = ("bsdf", "nee_uniform", "env_is")


def reference_image(
    scene,
    config: RenderConfig,
    spp: int,
    seed: int = 12345,
    cache: Path | None = None,
    mode: str = "bsdf",
) -> np.ndarray:
    """Render at ``spp`` paths per pixel in a non-learning ``mode``, cached on disk.

    Resolution and ``max_depth`` come from ``config``; its mode and all
    learning parameters are ignored.
    """
    if mode not in REFERENCE_MODES:
        raise ValueError(f"reference mode must be one of {REFERENCE_MODES}, got {mode!r}")
    w = config.width or scene.camera.width
    h = config.height or scene.camera.height
    cache = cache_dir() if cache is None else Path(cache)
    key = f"{scene.name}-{scene_hash(scene)}-{mode}-{w}x{h}-d{config.max_depth}-spp{spp}-s{seed}.npy"
    path = cache / key
    if path.exists():
        img = np.load(path)
        if img.shape == (h, w, 3):
            return img
    ref_cfg = RenderConfig(
        mode=mode, width=w, height=h, max_depth=config.max_depth, iterations=spp, seed=seed, threads=config.threads
    )
    img, _ = render(scene, ref_cfg)
    cache.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npy")
    np.save(tmp, img)
    tmp.replace(path)
    return img


@dataclass
class ModeResult:
    mode: str
    rmse: float
    nonzero_fraction: float
    avg_path_length: float
    ms: float
    stats: RenderStats
    image: np.ndarray


CSV_COLUMNS = ("mode", "rmse", "nonzero_fraction", "avg_path_length", "ms")


def compare_modes(
    scene,
    modes,
    spp: int,
    seed: int = 0,
    config: RenderConfig | None = None,
    reference: np.ndarray | None = None,
    ref_factor: int = 64,
) -> list[ModeResult]:
    """Render every mode with the same budget and seed and score it against a reference.

    ``config`` supplies the remaining parameters (default ``RenderConfig()``).
    Without an explicit ``reference`` a ``bsdf`` render at ``ref_factor``
    times the budget is used (from the cache when available).
    """
    if ref_factor < 1:
        raise ValueError("ref_factor must be >= 1")
    base = (config or RenderConfig()).with_(iterations=spp, seed=seed)
    if reference is None:
        reference = reference_image(scene, base, spp * ref_factor)
    out = []
    for mode in modes:
        t0 = time.perf_counter()
        img, stats = render(scene, base.with_(mode=mode))
        ms = (time.perf_counter() - t0) * 1e3
        out.append(ModeResult(mode, rmse(img, reference), stats.nonzero_fraction, stats.avg_path_length, ms, stats, img))
    return out


def write_report(results: list[ModeResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in results:
            w.writerow([r.mode, f"{r.rmse:.8g}", f"{r.nonzero_fraction:.8g}", f"{r.avg_path_length:.8g}", f"{r.ms:.3f}"])


def write_gnuplot(results: list[ModeResult], path) -> None:
    """Whitespace-separated columns with a numeric index for ``plot ... using 1:3``."""
    with open(path, "w") as fh:
        fh.write("# index " + " ".join(CSV_COLUMNS) + "\n")
        for i, r in enumerate(results):
            fh.write(f"{i} {r.mode} {r.rmse:.8g} {r.nonzero_fraction:.8g} {r.avg_path_length:.8g} {r.ms:.3f}\n")


def write_iteration_series(stats: RenderStats, path) -> None:
    """Per-iteration nonzero fraction and path length as gnuplot columns."""
    with open(path, "w") as fh:
        fh.write(f"# mode={stats.config.mode}\n# iteration nonzero_fraction avg_path_length ms_elapsed\n")
        for it in stats.iterations:
            frac = it.nonzero_paths / it.paths if it.paths else 0.0
            fh.write(f"{it.iteration} {frac:.8g} {it.avg_path_length:.8g} {it.ms_elapsed:.3f}\n")


# ---------------------------------------------------------------------------
# ergodicity
# ---------------------------------------------------------------------------


@dataclass
class ErgodicityReport:
    """Entries whose sampling probability fell below their floor share."""

    probe_strata: int = 0
    light_pairs: int = 0
    env_pairs: int = 0
    checked: int = 0
    min_margin: float = float("inf")

    @property
    def ok(self) -> bool:
        return self.probe_strata == 0 and self.light_pairs == 0 and self.env_pairs == 0


def _sweep(prob: np.ndarray, floor: np.ndarray, total: np.ndarray, rel_tol: float) -> tuple[int, int, float]:
    share = np.divide(floor, total, out=np.zeros_like(floor), where=total > 0)[:, None]
    bad = prob < share * (1.0 - rel_tol)
    ratio = np.divide(prob, share, out=np.full(prob.shape, np.inf), where=share > 0)
    margin = float(ratio.min()) if prob.size else float("inf")
    return int(bad.sum()), int(prob.size), margin


def ergodicity_sweep(stats: RenderStats, rel_tol: float = 1e-9) -> ErgodicityReport:
    """Check every probe stratum and every (cell, light) / (cell, tile) pair of a run.

    An entry passes when its probability is at least ``floor / total`` of its
    distribution; ``min_margin`` is the smallest ratio of the two.
    """
    rep = ErgodicityReport()
    tables = []
    if stats.qfield is not None:
        q = stats.qfield
        tables.append(("probe_strata", q.prob, q.floor, q.total))
    if stats.light_grid is not None:
        g = stats.light_grid
        tables.append(("light_pairs", g.prob, g.floor, g.total))
    if stats.env_grid is not None and stats.config.mode == "env_rl":
        g = stats.env_grid
        tables.append(("env_pairs", g.prob, g.floor, g.total))
    for name, prob, floor, total in tables:
        bad, n, margin = _sweep(prob, floor, total, rel_tol)
        setattr(rep, name, getattr(rep, name) + bad)
        rep.checked += n
        rep.min_margin = min(rep.min_margin, margin)
    return rep

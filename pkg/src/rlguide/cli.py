"""Command-line renderer.

    rlguide --scene door --mode rl --spp 64 --out door.pfm --stats door.csv

``--scene`` takes a path or the name of a bundled scene. Parameters the
scene's ``default`` preset sets are used unless given on the command line;
``--preset none`` ignores presets. Every effective parameter is written to
the stats header.
"""

from __future__ import annotations

import argparse
import sys

from .guiding import dump_probes
from .integrator import MODES, render
from .io import SceneError, load_scene, resolve_scene, write_image
from .presets import config_for, parse_alpha, parse_grid, parse_strata


def _arg(parse):
    def wrapped(text):
        try:
            return parse(text)
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None

    return wrapped


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlguide", description="Progressive path tracer with learned path guiding.")
    p.add_argument("--scene", required=True, metavar="PATH", help="scene JSON file or bundled scene name")
    p.add_argument("--out", default="render.pfm", metavar="PATH", help="output image (.pfm or .ppm)")
    p.add_argument("--spp", type=int, metavar="N", help="paths per pixel (one per iteration)")
    p.add_argument("--mode", choices=sorted(MODES), default="bsdf")
    p.add_argument("--probes", type=int, metavar="N", help="number of Q probes")
    p.add_argument("--strata", type=_arg(parse_strata), metavar="BxS", help="hemisphere bands x sectors")
    p.add_argument("--alpha", type=_arg(parse_alpha), metavar="{const:F,visits}", help="learning-rate schedule")
    p.add_argument("--grid", type=_arg(parse_grid), metavar="NX,NY,NZ", help="light / environment cell grid")
    p.add_argument("--floor", type=float, metavar="F", help="relative probability floor")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--threads", type=int, default=0, metavar="N", help="render threads (0 = all cores)")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible run")
    p.add_argument("--stats", metavar="PATH", help="per-iteration CSV with a parameter header")
    p.add_argument("--dump-probes", metavar="PATH", help="write learned tables after rendering")
    p.add_argument("--preset", default="default", metavar="NAME", help="scene preset to start from ('none' to skip)")
    p.add_argument("--width", type=int, metavar="N")
    p.add_argument("--height", type=int, metavar="N")
    p.add_argument("--max-depth", type=int, metavar="N")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {
        "iterations": args.spp,
        "probe_count": args.probes,
        "strata": args.strata,
        "alpha": args.alpha,
        "grid": args.grid,
        "floor": args.floor,
        "width": args.width,
        "height": args.height,
        "max_depth": args.max_depth,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        scene = load_scene(resolve_scene(args.scene))
        preset = None if args.preset == "none" else args.preset
        config = config_for(
            scene,
            preset,
            mode=args.mode,
            seed=args.seed,
            threads=args.threads,
            deterministic=args.deterministic,
            **overrides,
        )
        if args.dump_probes and config.mode in ("bsdf", "nee_uniform", "env_is"):
            raise ValueError(f"--dump-probes: mode {config.mode} learns nothing")
        image, stats = render(scene, config)
        write_image(image, args.out)
        if args.stats:
            stats.write_csv(args.stats)
        if args.dump_probes:
            if stats.qfield is not None:
                dump_probes(stats.qfield, args.dump_probes)
            else:
                grid = stats.light_grid if stats.light_grid is not None else stats.env_grid
                grid.dump_csv(args.dump_probes)
    except (OSError, SceneError, ValueError) as e:
        print(f"rlguide: error: {e}", file=sys.stderr)
        return 1
    print(
        f"{scene.name}: mode={config.mode} spp={config.iterations} nonzero={stats.nonzero_fraction:.4f} "
        f"avg_len={stats.avg_path_length:.3f} ms/iter={stats.ms_per_iteration:.1f} -> {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())

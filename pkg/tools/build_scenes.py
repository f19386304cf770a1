"""Regenerate the bundled example scenes in src/rlguide/data/.

    python3 tools/build_scenes.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "rlguide" / "data"


def quad(corner, e1, e2, facing, material):
    """Quad whose front side (``e1 x e2``) points along ``facing``."""
    c = np.cross(e1, e2)
    if np.dot(c, facing) < 0:
        e1, e2 = e2, e1
    return {"type": "quad", "corner": list(map(float, corner)), "edge1": list(map(float, e1)),
            "edge2": list(map(float, e2)), "material": material}


def box_inside(lo, hi, material, skip=()):
    """Six inward-facing walls of an axis-aligned box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    ext = hi - lo
    ex, ey, ez = np.array([ext[0], 0, 0]), np.array([0, ext[1], 0]), np.array([0, 0, ext[2]])
    faces = {
        "-x": quad(lo, ey, ez, (1, 0, 0), material),
        "+x": quad(lo + ex, ey, ez, (-1, 0, 0), material),
        "-y": quad(lo, ex, ez, (0, 1, 0), material),
        "+y": quad(lo + ey, ex, ez, (0, -1, 0), material),
        "-z": quad(lo, ex, ey, (0, 0, 1), material),
        "+z": quad(lo + ez, ex, ey, (0, 0, -1), material),
    }
    return [f for k, f in faces.items() if k not in skip]


def box_outside(lo, hi, material):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    out = []
    for f in box_inside(lo, hi, material):
        n = np.cross(f["edge1"], f["edge2"])
        out.append(quad(f["corner"], np.array(f["edge1"]), np.array(f["edge2"]), -n, material))
    return out


def camera(position, look_at, fov, width, height):
    return {"position": list(position), "look_at": list(look_at), "up": [0, 1, 0], "fov": fov,
            "width": width, "height": height}


def furnace():
    return {
        "name": "furnace",
        "camera": camera((0, 0, 4), (0, 0, 0), 40, 128, 128),
        "materials": [{"name": "white", "albedo": [1, 1, 1]}],
        "primitives": [{"type": "sphere", "center": [0, 0, 0], "radius": 1.0, "material": "white"}],
        "environment": {"constant": [1, 1, 1]},
    }


def cornell():
    prims = box_inside((-1, 0, -1), (1, 2, 1), "white", skip=("-x", "+x", "+z"))
    prims += box_inside((-1, 0, -1), (1, 2, 1), "red", skip=("+x", "-y", "+y", "-z", "+z"))
    prims += box_inside((-1, 0, -1), (1, 2, 1), "green", skip=("-x", "-y", "+y", "-z", "+z"))
    prims.append(quad((-0.25, 1.98, -0.25), np.array([0.5, 0, 0]), np.array([0, 0, 0.5]), (0, -1, 0), "lamp"))
    prims += box_outside((-0.6, 0, -0.5), (-0.05, 1.1, 0.1), "white")
    prims.append({"type": "sphere", "center": [0.45, 0.35, 0.3], "radius": 0.35, "material": "white"})
    return {
        "name": "cornell",
        "camera": camera((0, 1, 3.9), (0, 1, 0), 39, 64, 64),
        "materials": [
            {"name": "white", "albedo": [0.75, 0.75, 0.75]},
            {"name": "red", "albedo": [0.7, 0.1, 0.1]},
            {"name": "green", "albedo": [0.1, 0.7, 0.1]},
            {"name": "lamp", "albedo": [0, 0, 0], "emission": [15, 15, 15]},
        ],
        "primitives": prims,
    }


def door(dz=0.2, dh=1.2, lamp=((2.0, -0.8), (1.0, 1.6), 10.0), cam=((-0.4, 1.3, 1.3), (-3.0, 0.5, -1.0))):
    """Two rooms along x joined by a narrow door in a thick wall.

    The lamp hangs from the far room's ceiling; the camera stands in the near
    room next to the dividing wall and looks away from the door, so every
    pixel is lit only by light that came through the opening.
    """
    x0, xw0, xw1, x1 = -3.0, 0.0, 0.2, 3.2
    y1, z0, z1 = 2.0, -1.5, 1.5
    prims = box_inside((x0, 0, z0), (x1, y1, z1), "white")
    # dividing wall: faces toward room A (-x) and room B (+x), each split around the opening
    for x, facing in ((xw0, (-1, 0, 0)), (xw1, (1, 0, 0))):
        prims.append(quad((x, 0, z0), np.array([0, y1, 0]), np.array([0, 0, -dz - z0]), facing, "white"))
        prims.append(quad((x, 0, dz), np.array([0, y1, 0]), np.array([0, 0, z1 - dz]), facing, "white"))
        prims.append(quad((x, dh, -dz), np.array([0, y1 - dh, 0]), np.array([0, 0, 2 * dz]), facing, "white"))
    t = np.array([xw1 - xw0, 0, 0])
    prims.append(quad((xw0, 0, -dz), t, np.array([0, dh, 0]), (0, 0, 1), "white"))
    prims.append(quad((xw0, 0, dz), t, np.array([0, dh, 0]), (0, 0, -1), "white"))
    prims.append(quad((xw0, dh, -dz), t, np.array([0, 0, 2 * dz]), (0, -1, 0), "white"))
    (lx, lz), (sx, sz), emission = lamp
    prims.append(quad((lx, y1 - 0.01, lz), np.array([sx, 0, 0]), np.array([0, 0, sz]), (0, -1, 0), "lamp"))
    return {
        "name": "door",
        "camera": camera(cam[0], cam[1], 60, 64, 64),
        "materials": [
            {"name": "white", "albedo": [0.8, 0.8, 0.8]},
            {"name": "lamp", "albedo": [0, 0, 0], "emission": [emission] * 3},
        ],
        "primitives": prims,
        "presets": {"default": {"probes": 256, "alpha": "const:0.3"}},
    }


def manylights():
    """A room lit by 32 small ceiling lamps plus 32 lamps sealed inside a closed box."""
    prims = box_inside((-2, 0, -2), (2, 2, 2), "white")
    s = 0.12
    for i in range(8):
        for j in range(4):
            x = -1.75 + i * 0.5
            z = -1.5 + j * 1.0
            prims.append(quad((x - s / 2, 1.99, z - s / 2), np.array([s, 0, 0]), np.array([0, 0, s]), (0, -1, 0), "lamp"))
    # sealed compartment in a corner of the room, lamps inside facing its floor
    lo, hi = np.array([1.0, 0.0, -1.9]), np.array([1.9, 0.8, -1.0])
    prims += box_outside(lo, hi, "white")
    for i in range(8):
        for j in range(4):
            x = lo[0] + 0.06 + i * 0.1
            z = lo[2] + 0.1 + j * 0.2
            prims.append(quad((x, hi[1] - 0.05, z), np.array([0.05, 0, 0]), np.array([0, 0, 0.05]), (0, -1, 0), "lamp"))
    return {
        "name": "manylights",
        "camera": camera((0, 1.2, 1.95), (0, 0.6, -1), 70, 64, 64),
        "materials": [
            {"name": "white", "albedo": [0.7, 0.7, 0.7]},
            {"name": "lamp", "albedo": [0, 0, 0], "emission": [20, 20, 20]},
        ],
        "primitives": prims,
    }


def sunsky():
    """Constant sky plus one hot texel; a tall wall shadows the ground's -x half from it.

    The wall is tall enough that the whole hot tile is hidden from every point
    of the shadowed half, so there is no penumbra. The scene is flat, hence the
    coarse vertical grid resolution in the preset.
    """
    w, h = 16, 8
    lattice = np.full((h, w, 3), 0.5)
    sun_row, sun_col = 1, 0
    lattice[sun_row, sun_col] = (400.0, 380.0, 340.0)
    prims = [
        quad((-2, 0, -2), np.array([4, 0, 0]), np.array([0, 0, 4]), (0, 1, 0), "ground"),
        quad((0, 0, -3), np.array([0, 5.0, 0]), np.array([0, 0, 6]), (1, 0, 0), "wall"),
        quad((-0.02, 0, -3), np.array([0, 5.0, 0]), np.array([0, 0, 6]), (-1, 0, 0), "wall"),
    ]
    return {
        "name": "sunsky",
        "camera": camera((-1.0, 5.0, 4.5), (0.0, 0.0, 0.0), 42, 64, 64),
        "materials": [
            {"name": "ground", "albedo": [0.7, 0.7, 0.7]},
            {"name": "wall", "albedo": [0.5, 0.5, 0.5]},
        ],
        "primitives": prims,
        "environment": {"lattice": lattice.tolist()},
        "presets": {"default": {"grid": "8,2,8"}},
    }


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (furnace, cornell, door, manylights, sunsky):
        scene = build()
        path = OUT / f"{scene['name']}.json"
        path.write_text(json.dumps(scene, indent=1) + "\n")
        print(f"wrote {path} ({len(scene['primitives'])} primitives)")


if __name__ == "__main__":
    main()

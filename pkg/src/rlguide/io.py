"""Scene files (JSON) and HDR / LDR image output.

Scene file layout::

    {
      "name": "cornell",
      "camera": {"position": [0, 1, 3.5], "look_at": [0, 1, 0], "up": [0, 1, 0],
                 "fov": 40, "width": 64, "height": 64},
      "materials": [{"name": "white", "albedo": [0.8, 0.8, 0.8]},
                    {"name": "lamp", "albedo": [0, 0, 0], "emission": [10, 10, 10]}],
      "primitives": [{"type": "quad", "corner": [...], "edge1": [...], "edge2": [...],
                      "material": "white"},
                     {"type": "sphere", "center": [...], "radius": 0.5, "material": "white"},
                     {"type": "triangle", "vertices": [[...], [...], [...]], "material": "white"}],
      "environment": {"constant": [1, 1, 1]}  or  {"lattice": [[[r, g, b], ...], ...]},
      "presets": {"default": {"probes": 2048, "spp": 64}}
    }

Quads and triangles emit and receive on the side of ``edge1 x edge2``
(counter-clockwise vertices).
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .geometry import QUAD, SPHERE, TRIANGLE, Primitive
from .materials import EnvironmentLight, Material
from .scene import Camera, Scene


class SceneError(ValueError):
    """Invalid scene file; the message names the offending location."""


def _vec(value, where: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise SceneError(f"{where}: expected a list of 3 numbers, got {value!r}")
    try:
        v = tuple(float(x) for x in value)
    except (TypeError, ValueError):
        raise SceneError(f"{where}: expected numbers, got {value!r}") from None
    if not all(math.isfinite(x) for x in v):
        raise SceneError(f"{where}: numbers must be finite")
    return v


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SceneError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def scene_from_dict(data: dict, name: str = "scene") -> Scene:
    if not isinstance(data, dict):
        raise SceneError("scene file must contain a JSON object")
    if "camera" not in data:
        raise SceneError("scene has no camera")
    cam = data["camera"]
    try:
        camera = Camera(
            _vec(cam.get("position"), "camera.position"),
            _vec(cam.get("look_at"), "camera.look_at"),
            _vec(cam.get("up", [0, 1, 0]), "camera.up"),
            _number(cam.get("fov", 40.0), "camera.fov"),
            int(cam.get("width", 64)),
            int(cam.get("height", 64)),
        )
    except ValueError as e:
        raise SceneError(f"camera: {e}") from None

    materials: list[Material] = []
    index: dict[str, int] = {}
    for i, m in enumerate(data.get("materials", [])):
        mname = m.get("name", f"material{i}")
        if mname in index:
            raise SceneError(f"materials[{i}]: duplicate material name {mname!r}")
        try:
            materials.append(
                Material(
                    _vec(m.get("albedo", [0.8, 0.8, 0.8]), f"materials[{i}].albedo"),
                    _vec(m.get("emission", [0, 0, 0]), f"materials[{i}].emission"),
                    _number(m.get("phong", 0.0), f"materials[{i}].phong"),
                    mname,
                )
            )
        except SceneError:
            raise
        except ValueError as e:
            raise SceneError(f"materials[{i}] ({mname}): {e}") from None
        index[mname] = i

    prims: list[Primitive] = []
    for i, p in enumerate(data.get("primitives", [])):
        where = f"primitives[{i}]"
        ref = p.get("material")
        if ref not in index:
            raise SceneError(f"{where}: unresolved material reference {ref!r}")
        mid = index[ref]
        kind = p.get("type")
        try:
            if kind == "sphere":
                prims.append(Primitive.sphere(_vec(p.get("center"), f"{where}.center"), _number(p.get("radius"), f"{where}.radius"), mid))
            elif kind == "quad":
                prims.append(
                    Primitive.quad(
                        _vec(p.get("corner"), f"{where}.corner"),
                        _vec(p.get("edge1"), f"{where}.edge1"),
                        _vec(p.get("edge2"), f"{where}.edge2"),
                        mid,
                    )
                )
            elif kind == "triangle":
                vs = p.get("vertices")
                if not isinstance(vs, list) or len(vs) != 3:
                    raise SceneError(f"{where}.vertices: expected three vertices")
                prims.append(Primitive.triangle(*(_vec(v, f"{where}.vertices[{j}]") for j, v in enumerate(vs)), mid))
            else:
                raise SceneError(f"{where}: unknown primitive type {kind!r}")
        except SceneError:
            raise
        except ValueError as e:
            raise SceneError(f"{where}: {e}") from None

    env = None
    e = data.get("environment")
    if e is not None:
        try:
            if "constant" in e:
                env = EnvironmentLight.uniform(_vec(e["constant"], "environment.constant"))
            elif "lattice" in e:
                env = EnvironmentLight(np.array(e["lattice"], dtype=np.float64))
            else:
                raise SceneError("environment: expected 'constant' or 'lattice'")
        except SceneError:
            raise
        except ValueError as err:
            raise SceneError(f"environment: {err}") from None

    presets = data.get("presets", {})
    if not isinstance(presets, dict):
        raise SceneError("presets must be an object")
    try:
        return Scene(camera, materials, prims, env, presets, data.get("name", name))
    except ValueError as err:
        raise SceneError(str(err)) from None


def load_scene(path) -> Scene:
    """Parse and validate a scene file; area lights come from emissive materials."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    return scene_from_dict(data, path.stem)


def scene_to_dict(scene: Scene) -> dict:
    c = scene.camera
    out: dict = {
        "name": scene.name,
        "camera": {
            "position": list(c.position),
            "look_at": list(c.look_at),
            "up": list(c.up),
            "fov": c.fov,
            "width": c.width,
            "height": c.height,
        },
        "materials": [],
        "primitives": [],
    }
    names = []
    for i, m in enumerate(scene.materials):
        name = m.name or f"material{i}"
        while name in names:
            name += "_"
        names.append(name)
        entry = {"name": name, "albedo": list(m.albedo), "emission": list(m.emission)}
        if m.phong:
            entry["phong"] = m.phong
        out["materials"].append(entry)
    for p in scene.primitives:
        d = list(p.data)
        ref = names[p.material_id]
        if p.kind == SPHERE:
            out["primitives"].append({"type": "sphere", "center": d[0:3], "radius": d[3], "material": ref})
        elif p.kind == QUAD:
            out["primitives"].append({"type": "quad", "corner": d[0:3], "edge1": d[3:6], "edge2": d[6:9], "material": ref})
        elif p.kind == TRIANGLE:
            out["primitives"].append({"type": "triangle", "vertices": [d[0:3], d[3:6], d[6:9]], "material": ref})
    env = scene.environment
    if env is not None:
        if env.constant:
            out["environment"] = {"constant": env.lattice[0, 0].tolist()}
        else:
            out["environment"] = {"lattice": env.lattice.tolist()}
    if scene.presets:
        out["presets"] = scene.presets
    return out


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1) + "\n")


def scene_hash(scene: Scene) -> str:
    blob = json.dumps(scene_to_dict(scene), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def bundled_scene_path(name: str) -> Path:
    return Path(__file__).parent / "data" / f"{name}.json"


def resolve_scene(name_or_path) -> Path:
    """A path as given, or the bundled scene of that name."""
    p = Path(name_or_path)
    if p.exists():
        return p
    b = bundled_scene_path(p.stem)
    if b.exists():
        return b
    raise FileNotFoundError(f"scene {name_or_path!s} not found")


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def write_image(image: np.ndarray, path, fmt: str | None = None) -> None:
    """PFM (little-endian float32, rows bottom to top) or 8-bit P6 PPM with gamma 1/2.2.

    ``image`` is ``(height, width, 3)`` with row 0 at the top. ``fmt``
    defaults to the file suffix.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    h, w, _ = img.shape
    if fmt == "pfm":
        payload = np.ascontiguousarray(img[::-1], dtype="<f4").tobytes()
        with open(path, "wb") as fh:
            fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
            fh.write(payload)
    elif fmt == "ppm":
        ldr = np.clip(img, 0.0, 1.0) ** (1.0 / 2.2)
        data = np.round(ldr * 255.0).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(data.tobytes())
    else:
        raise ValueError(f"unknown image format {fmt!r} (use pfm or ppm)")


def read_pfm(path) -> np.ndarray:
    """Read a colour PFM back into ``(height, width, 3)`` float32, row 0 at the top."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"PF":
            raise ValueError(f"{path}: not a colour PFM")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        order = "<" if scale < 0 else ">"
        data = np.frombuffer(fh.read(), dtype=f"{order}f4")
    if data.size != w * h * 3:
        raise ValueError(f"{path}: truncated payload")
    return data.reshape(h, w, 3)[::-1].astype(np.float32)


def pfm_bytes_equal(a, b) -> bool:
    return Path(a).read_bytes() == Path(b).read_bytes()

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rlguide.io import (
    SceneError,
    load_scene,
    read_pfm,
    resolve_scene,
    save_scene,
    scene_from_dict,
    scene_hash,
    scene_to_dict,
    write_image,
)

CAMERA = {"position": [0, 0, 5], "look_at": [0, 0, 0], "fov": 40, "width": 8, "height": 8}
QUAD = {"type": "quad", "corner": [-1, 0, -1], "edge1": [0, 0, 2], "edge2": [2, 0, 0], "material": "white"}


def write_json(tmp_path, data, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def minimal(**extra):
    data = {"camera": CAMERA, "materials": [{"name": "white", "albedo": [0.5, 0.5, 0.5]}], "primitives": [QUAD]}
    data.update(extra)
    return data


def test_minimal_scene(tmp_path):
    sc = load_scene(write_json(tmp_path, minimal()))
    assert len(sc.primitives) == 1
    assert len(sc.lights) == 0
    assert sc.environment is None
    assert sc.name == "s"


def test_emissive_material_makes_a_light(tmp_path):
    mats = [{"name": "white", "albedo": [0.5, 0.5, 0.5], "emission": [4, 4, 4]}]
    sc = load_scene(write_json(tmp_path, minimal(materials=mats)))
    assert len(sc.lights) == 1
    assert sc.lights[0].area == pytest.approx(4.0)


def test_dangling_material_reference(tmp_path):
    prim = dict(QUAD, material="marble")
    with pytest.raises(SceneError, match="marble"):
        load_scene(write_json(tmp_path, minimal(primitives=[prim])))


def test_parse_error_names_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "camera": {,\n}')
    with pytest.raises(SceneError, match=r"bad\.json:2:\d+"):
        load_scene(p)


@pytest.mark.parametrize(
    "prim",
    [
        dict(QUAD, edge1=[0, 0, 0]),
        dict(QUAD, edge2=[0, 0, 4]),
        {"type": "sphere", "center": [0, 0, 0], "radius": 0.0, "material": "white"},
        {"type": "triangle", "vertices": [[0, 0, 0], [1, 1, 1], [2, 2, 2]], "material": "white"},
    ],
)
def test_degenerate_primitive(tmp_path, prim):
    with pytest.raises(SceneError, match=r"primitives\[0\]"):
        load_scene(write_json(tmp_path, minimal(primitives=[prim])))


@pytest.mark.parametrize(
    "patch",
    [
        {"camera": None},
        {"primitives": [dict(QUAD, type="torus")]},
        {"materials": [{"name": "white", "albedo": [0.5, 0.5]}]},
        {"materials": [{"name": "white", "albedo": [1.5, 0.5, 0.5]}]},
        {"materials": [{"name": "white", "albedo": [0.5] * 3}, {"name": "white", "albedo": [0.5] * 3}]},
        {"environment": {"constant": [1, "x", 1]}},
    ],
)
def test_invalid_fields_raise_scene_error(tmp_path, patch):
    data = minimal(**patch)
    if data["camera"] is None:
        del data["camera"]
    with pytest.raises(SceneError):
        load_scene(write_json(tmp_path, data))


def test_black_pfm_payload(tmp_path):
    p = tmp_path / "b.pfm"
    write_image(np.zeros((1, 1, 3)), p)
    raw = p.read_bytes()
    assert raw.startswith(b"PF\n1 1\n-1.0\n")
    payload = raw[len(b"PF\n1 1\n-1.0\n"):]
    assert payload == np.zeros(3, dtype="<f4").tobytes()
    assert len(payload) == 12


def test_ppm_white_and_gamma(tmp_path):
    p = tmp_path / "w.ppm"
    img = np.array([[[1.0, 0.0, 0.5], [7.0, -1.0, 0.218]]])
    write_image(img, p)
    raw = p.read_bytes()
    assert raw.startswith(b"P6\n2 1\n255\n")
    data = list(raw[len(b"P6\n2 1\n255\n"):])
    assert data[0] == 255 and data[1] == 0
    assert data[2] == round(255 * 0.5 ** (1 / 2.2))
    assert data[3] == 255 and data[4] == 0
    assert data[5] == round(255 * 0.218 ** (1 / 2.2))


def test_pfm_row_order(tmp_path):
    img = np.zeros((2, 1, 3))
    img[0, 0] = 1.0  # top row
    p = tmp_path / "r.pfm"
    write_image(img, p)
    payload = p.read_bytes()[len(b"PF\n1 2\n-1.0\n"):]
    assert np.frombuffer(payload, "<f4").tolist() == [0, 0, 0, 1, 1, 1]


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3)), elements=st.floats(-1e6, 1e6, width=32)))
def test_pfm_round_trip_bit_exact(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("pfm") / "x.pfm"
    write_image(img, p)
    back = read_pfm(p)
    assert back.dtype == np.float32
    assert back.tobytes() == img.tobytes()


def test_image_validation(tmp_path):
    with pytest.raises(ValueError):
        write_image(np.zeros((2, 2)), tmp_path / "a.pfm")
    with pytest.raises(ValueError):
        write_image(np.full((1, 1, 3), np.nan), tmp_path / "a.pfm")
    with pytest.raises(ValueError):
        write_image(np.zeros((1, 1, 3)), tmp_path / "a.png")


@pytest.mark.parametrize("name", ["cornell", "door", "furnace", "manylights", "sunsky"])
def test_bundled_scenes_round_trip(tmp_path, name):
    sc = load_scene(resolve_scene(name))
    assert sc.name == name
    out = tmp_path / f"{name}.json"
    save_scene(sc, out)
    again = load_scene(out)
    assert scene_to_dict(again) == scene_to_dict(sc)
    assert scene_hash(again) == scene_hash(sc)
    assert len(again.lights) == len(sc.lights)


def test_bundled_scene_contents(bundled):
    assert bundled("furnace").environment is not None and len(bundled("furnace").lights) == 0
    assert len(bundled("manylights").lights) >= 16
    assert bundled("sunsky").environment is not None
    assert len(bundled("door").lights) >= 1


def test_resolve_scene_missing():
    with pytest.raises(FileNotFoundError):
        resolve_scene("no_such_scene_anywhere")


def test_scene_hash_changes_with_content():
    a = scene_from_dict(minimal())
    b = scene_from_dict(minimal(primitives=[dict(QUAD, corner=[-1, 0.1, -1])]))
    assert scene_hash(a) != scene_hash(b)

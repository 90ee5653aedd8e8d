import json

import numpy as np
import pytest

from mvsfs import fileio
from mvsfs.errors import ParseError
from mvsfs.geometry import Intrinsics, look_at
from mvsfs.multiview import CorrespondenceSet, PointCloud


@pytest.mark.parametrize("shape", [(5, 7), (4, 6, 3)])
def test_pfm_roundtrip_bit_exact(tmp_path, rng, shape):
    a = rng.normal(size=shape).astype(np.float32)
    a.flat[3] = np.nan
    p = tmp_path / "a.pfm"
    fileio.write_pfm(p, a)
    b = fileio.read_pfm(p)
    assert b.dtype == np.float32 and b.shape == shape
    np.testing.assert_array_equal(a.view(np.uint32), b.view(np.uint32))


def test_pfm_layout_is_bottom_up_little_endian(tmp_path):
    a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    p = tmp_path / "a.pfm"
    fileio.write_pfm(p, a)
    raw = p.read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    np.testing.assert_array_equal(np.frombuffer(raw[-16:], "<f4"), [3, 4, 1, 2])


def test_big_endian_pfm_is_read(tmp_path):
    p = tmp_path / "be.pfm"
    p.write_bytes(b"Pf\n2 1\n1.0\n" + np.array([1.5, -2.0], ">f4").tobytes())
    np.testing.assert_array_equal(fileio.read_pfm(p), [[1.5, -2.0]])


def test_pfm_errors(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"P6\n2 2\n255\n")
    with pytest.raises(ParseError):
        fileio.read_pfm(p)
    p.write_bytes(b"Pf\n4 4\n-1.0\n" + bytes(10))
    with pytest.raises(ParseError, match="truncated"):
        fileio.read_pfm(p)
    with pytest.raises(ValueError):
        fileio.write_pfm(p, np.zeros((2, 2, 2)))


@pytest.mark.parametrize("bits", [8, 16])
def test_png_roundtrip_of_quantized_values(tmp_path, rng, bits):
    top = 2**bits - 1
    shape = (6, 5, 3) if bits == 8 else (6, 5)  # 16-bit output is single-channel
    a = rng.integers(0, top + 1, shape) / top
    p = tmp_path / "a.png"
    fileio.write_png(p, a, bits=bits)
    np.testing.assert_array_equal(fileio.read_png(p), a)


def test_mask_roundtrip(tmp_path, rng):
    m = rng.random((7, 9)) > 0.5
    fileio.write_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(fileio.read_mask(tmp_path / "m.png"), m)


def test_matches_roundtrip_and_errors(tmp_path):
    m = CorrespondenceSet([(0, 1, 2, 1, 3, 4), (0, 10, 20, 2, 30, 40)])
    p = tmp_path / "m.txt"
    fileio.write_matches(p, m)
    assert fileio.read_matches(p) == m
    p.write_text("# comment\n0 1 2 1 3 4\n0 1 2 1 3\n")
    with pytest.raises(ParseError) as exc:
        fileio.read_matches(p)
    assert exc.value.line == 3


def test_lighting_roundtrip_bit_exact(tmp_path, rng):
    L = rng.normal(size=(3, 9))
    p = tmp_path / "l.txt"
    fileio.write_lighting(p, L)
    np.testing.assert_array_equal(fileio.read_lighting(p), L)
    p.write_text("1 2 3\n")
    with pytest.raises(ParseError):
        fileio.read_lighting(p)


def test_ply_roundtrip_bit_exact(tmp_path, rng):
    pos = rng.normal(size=(20, 3)) * 1e5
    for colors in (None, rng.random((20, 3))):
        cloud = PointCloud(pos, colors, np.zeros(20, int))
        p = tmp_path / "c.ply"
        fileio.write_ply(p, cloud)
        back = fileio.read_ply(p)
        pts = back[0] if isinstance(back, tuple) else back.positions
        np.testing.assert_array_equal(pts, pos)


def _scene(tmp_path):
    img = np.full((6, 6), 0.5, dtype=np.float32)
    fileio.write_pfm(tmp_path / "img.pfm", img)
    fileio.write_mask(tmp_path / "mask.png", np.ones((6, 6), bool))
    doc = {
        "views": [{"image": "img.pfm", "mask": "mask.png", "lighting": "l1",
                   "intrinsics": {"mode": "perspective", "f": 10.0, "x0": 2.5, "y0": 2.5},
                   "pose": look_at([0, 0, -5.0], [0, 0, 0]).to_dict()}],
        "solver": {"max_outer_iters": 7},
        "coupling": {"lambda": 1e-5},
        "nominal_depth": 5.0,
    }
    return doc


def test_scene_config_load_save_roundtrip(tmp_path):
    doc = _scene(tmp_path)
    (tmp_path / "scene.json").write_text(json.dumps(doc))
    cfg = fileio.load_scene_config(tmp_path / "scene.json")
    assert cfg.views[0].intrinsics == Intrinsics.perspective(10.0, 2.5, 2.5)
    assert fileio.solver_options(cfg).max_outer_iters == 7
    fileio.save_scene_config(tmp_path / "copy.json", cfg)
    again = fileio.load_scene_config(tmp_path / "copy.json")
    assert again.to_dict() == cfg.to_dict()
    view = fileio.load_view(again.views[0])
    assert view.image.shape == (6, 6)


@pytest.mark.parametrize("edit, message", [
    (lambda d: d["views"][0].update(image="missing.pfm"), "not found"),
    (lambda d: d["solver"].update(warp=1), "unknown solver"),
    (lambda d: d["solver"].update(mu=0.5), "bad solver"),
    (lambda d: d["coupling"].update({"lambda": -1}), "lambda"),
    (lambda d: d.update(views=[]), "views"),
])
def test_scene_config_errors(tmp_path, edit, message):
    doc = _scene(tmp_path)
    edit(doc)
    (tmp_path / "scene.json").write_text(json.dumps(doc))
    with pytest.raises(ParseError, match=message):
        fileio.load_scene_config(tmp_path / "scene.json")


def test_invalid_json_reports_line(tmp_path):
    p = tmp_path / "scene.json"
    p.write_text('{\n  "views": [\n  oops\n}')
    with pytest.raises(ParseError) as exc:
        fileio.load_scene_config(p)
    assert exc.value.line == 3


def test_report_writes_non_finite_as_strings(tmp_path):
    fileio.write_report(tmp_path / "r.json", {"a": float("nan"), "b": [np.float64(1.5), float("inf")]})
    assert json.loads((tmp_path / "r.json").read_text()) == {"a": "nan", "b": [1.5, "inf"]}

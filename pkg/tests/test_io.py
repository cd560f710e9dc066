import numpy as np
import pytest
from PIL import Image

from implicit_points.envmap import EnvironmentMap
from implicit_points.io import (MAGIC, SceneFile, preview_rgb, read_env_map, read_feature_image,
                                read_scene, read_tonemapper, write_env_map, write_feature_image,
                                write_preview, write_scene, write_tonemapper)
from implicit_points.scene import CameraView, FeatureImage, PointSet, ProbabilityField
from implicit_points.scenes import camera_ring, make_field
from implicit_points.tonemap import ResponseCurve


def test_scene_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    field = make_field("blobs", 3, resolution=24)
    pts = PointSet(rng.normal(size=(50, 3)), rng.random(50), rng.normal(size=(50, 4, 9)))
    cams = camera_ring("blobs", 3)
    path = tmp_path / "s.ips"
    write_scene(path, SceneFile(field, pts, cams, {"seed": 3, "kind": "blobs"}))
    assert path.read_bytes()[:8] == MAGIC
    back = read_scene(path)
    assert back.meta == {"seed": 3, "kind": "blobs"}
    assert back.field.resolution == 24
    assert np.array_equal(back.field.indices, field.indices)
    assert np.array_equal(back.field.weights, field.weights)
    assert np.array_equal(back.points.positions, pts.positions)
    assert np.array_equal(back.points.opacities, pts.opacities)
    assert np.array_equal(back.points.sh_coeffs, pts.sh_coeffs)
    assert len(back.cameras) == 3
    for a, b in zip(cams, back.cameras):
        assert np.array_equal(a.as_array(), b.as_array())


def test_scene_without_optional_sections(tmp_path):
    path = tmp_path / "e.ips"
    write_scene(path, SceneFile())
    back = read_scene(path)
    assert back.field is None and back.points is None and back.cameras == []


def test_scene_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ips"
    path.write_bytes(b"NOTASCENE" + bytes(64))
    with pytest.raises(ValueError):
        read_scene(path)


def test_feature_image_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    f = rng.normal(size=(6, 8, 4)).astype(np.float32).astype(np.float64)
    t = rng.random((6, 8)).astype(np.float32).astype(np.float64)
    side = write_feature_image(tmp_path / "frame_0000", FeatureImage(f, t), {"frame": 0})
    assert side["frame"] == 0 and side["layout"] == "HWC"
    assert (tmp_path / "frame_0000.f32").stat().st_size == 6 * 8 * 4 * 4
    assert (tmp_path / "frame_0000_T.f32").stat().st_size == 6 * 8 * 4
    back = read_feature_image(tmp_path / "frame_0000")
    assert np.array_equal(back.features, f)
    assert np.array_equal(back.transmittance, t)


def test_preview_identity_curve(tmp_path):
    f = np.zeros((2, 3, 4))
    f[0, 0, :3] = [0.0, 0.5, 1.0]
    f[0, 1, :3] = [-1.0, 2.0, 0.25]
    img = FeatureImage(f, np.ones((2, 3)))
    rgb = preview_rgb(img)
    assert rgb.dtype == np.uint8 and rgb.shape == (2, 3, 3)
    assert rgb[0, 0].tolist() == [0, 128, 255]
    assert rgb[0, 1].tolist() == [0, 255, 64]
    write_preview(tmp_path / "p.png", img)
    assert np.array_equal(np.asarray(Image.open(tmp_path / "p.png")), rgb)
    write_preview(tmp_path / "p.ppm", img)
    assert (tmp_path / "p.ppm").read_bytes() == b"P6\n3 2\n255\n" + rgb.tobytes()


def test_env_map_round_trip(tmp_path):
    t = np.random.default_rng(2).normal(size=(4, 8, 4)).astype(np.float32).astype(np.float64)
    write_env_map(tmp_path / "env", EnvironmentMap(t), {"psnr_db": 50.0})
    assert np.array_equal(read_env_map(tmp_path / "env").texels, t)


def test_tonemapper_round_trip(tmp_path):
    c = np.linspace(0, 1, 25) ** 0.7
    write_tonemapper(tmp_path / "tm.json", ResponseCurve(c), -1.5)
    curve, ev = read_tonemapper(tmp_path / "tm.json")
    assert ev == -1.5
    assert np.array_equal(curve.values, c)

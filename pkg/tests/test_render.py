import json

import numpy as np
import pytest

from terrain_shadow.render import (
    DEBUG_CHANNELS,
    BodyConfig,
    CameraConfig,
    LightConfig,
    Scene,
    SceneError,
    compare_images,
    debug_image,
    load_scene,
    read_pfm,
    render_buffers,
    render_scene,
    save_scene,
    write_pfm,
    write_png,
)
from terrain_shadow.shadow import TraceConfig


def small_scene(terrain=None, light=(0.0, 0.0, 1.0), method="dp", **cam):
    cam = {"width": 32, "height": 32, "vfov_deg": 20.0, **cam}
    return Scene(
        body=BodyConfig(resolution=64, terrain=terrain or {"type": "flat", "height": 0.0}),
        light=LightConfig(direction=light),
        camera=CameraConfig(**cam),
        method=method,
        trace=TraceConfig((3, 3)),
    ).validate()


@pytest.mark.parametrize("method", ["dp", "uniform", "reference"])
def test_flat_body_under_zenith_sun_is_fully_lit(method):
    res = render_buffers(small_scene(method=method), threads=1)
    assert res.hit.all()
    assert np.all(res.shadow == 0.0)
    # irradiance is N.L, close to one near the sub-solar point
    assert res.image.min() > 0.98 and res.image.max() <= 1.0


def test_sun_below_horizon_gives_black():
    res = render_buffers(small_scene(light=(0.0, 0.0, -1.0)), threads=1)
    assert res.hit.all() and np.all(res.image == 0.0)


def test_background_pixels_are_black():
    scene = small_scene(position=(0.0, 0.0, 4.0), vfov_deg=60.0)
    res = render_buffers(scene, threads=1)
    assert 0 < res.hit.sum() < res.hit.size
    assert np.all(res.image[res.hit == 0] == 0.0)
    assert np.all(res.cost[res.hit == 0] == 1.0)


def test_dp_samples_fixed_by_schedule():
    scene = small_scene({"type": "crater", "seed": 1}, light=(0.6, 0.2, 0.3))
    img, stats = render_scene(scene, threads=1)
    assert stats.max_samples <= 3 * sum(scene.trace.schedule)
    assert stats.method == "dp" and stats.hit_pixels == 32 * 32
    assert img.dtype == np.float32 and img.shape == (32, 32)


def test_render_is_deterministic():
    scene = small_scene({"type": "fractal", "seed": 2}, light=(0.5, 0.1, 0.4), method="reference")
    a = render_buffers(scene, threads=1).image
    b = render_buffers(scene, threads=1).image
    assert np.array_equal(a, b)


@pytest.mark.parametrize("channel", DEBUG_CHANNELS)
def test_debug_channels(channel):
    scene = small_scene({"type": "crater", "seed": 1}, light=(0.9, 0.1, 0.15))
    out = debug_image(render_buffers(scene, threads=1), channel)
    assert out.shape == (32, 32, 3) and out.dtype == np.uint8


def test_penumbra_channel_colours():
    scene = small_scene({"type": "crater", "seed": 1}, light=(0.9, 0.1, 0.15))
    res = render_buffers(scene, threads=1)
    out = debug_image(res, "penumbra")
    umbra = (res.hit == 1) & (res.shadow >= 1.0)
    soft = (res.hit == 1) & (res.shadow > 0) & (res.shadow < 1)
    assert umbra.any() and soft.any()
    assert np.all(out[umbra] == (40, 60, 230)) and np.all(out[soft] == (220, 40, 40))
    with pytest.raises(ValueError):
        debug_image(res, "nope")


def test_pfm_round_trip(tmp_path, rng):
    img = rng.random((7, 5)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n5 7\n-1.0\n")
    # first stored row is the bottom of the image
    assert np.array_equal(np.frombuffer(raw[-20:], "<f4"), img[0])
    assert np.array_equal(read_pfm(tmp_path / "a.pfm"), img)


def test_pfm_rejects_other_formats(tmp_path):
    (tmp_path / "x.pfm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(ValueError):
        read_pfm(tmp_path / "x.pfm")


def test_png_writers(tmp_path):
    from PIL import Image

    write_png(tmp_path / "g.png", np.array([[0.0, 1.0]], dtype=np.float32))
    g = Image.open(tmp_path / "g.png")
    assert g.mode == "L" and np.asarray(g).tolist() == [[0, 255]]
    write_png(tmp_path / "c.png", np.full((2, 2, 3), 7, dtype=np.uint8))
    assert Image.open(tmp_path / "c.png").mode == "RGB"


def test_compare_identical(rng):
    a = rng.random((16, 16))
    st = compare_images(a, a)
    assert st.sigma == 0.0 and st.mean_abs_error == 0.0 and st.within_3sigma == 1.0


def test_compare_normalizes_by_max(rng):
    a = rng.random((16, 16))
    st = compare_images(a, 3.0 * a)
    assert st.sigma == pytest.approx(0.0, abs=1e-12)


def test_compare_constant_shift():
    a = np.linspace(0.2, 1.0, 100).reshape(10, 10)
    b = a.copy()
    b[b < 1.0] -= 0.1
    st = compare_images(a, b)
    assert st.mean_error == pytest.approx(0.099, abs=1e-3)


def test_compare_dark_offset_hides_dim_differences():
    a = np.array([[1.0, 0.01, 0.5]])
    b = np.array([[1.0, 0.02, 0.5]])
    assert compare_images(a, b).mean_abs_error > 0
    assert compare_images(a, b, dark_offset=7 / 255).mean_abs_error == 0.0


def test_compare_shape_mismatch():
    with pytest.raises(ValueError):
        compare_images(np.zeros((2, 2)), np.zeros((2, 3)))


def test_scene_json_round_trip(tmp_path):
    scene = small_scene({"type": "crater", "seed": 5}, light=(0.3, 0.1, 0.9))
    save_scene(tmp_path / "s.json", scene)
    back = load_scene(tmp_path / "s.json")
    assert back.replace(base_dir=".") == scene


@pytest.mark.parametrize(
    "patch",
    [
        {"method": "raytrace"},
        {"light": {"direction": [0, 0, 1], "angular_radius_rad": 0.0}},
        {"light": {"direction": [0, 0, 0]}},
        {"camera": {"vfov_deg": 190}},
        {"camera": {"width": 0}},
        {"trace": {"schedule": [7]}},
        {"reference_samples": 0},
        {"body": {"radius_m": -1}},
        {"body": {"colour": "grey"}},
    ],
)
def test_scene_validation_errors(tmp_path, patch):
    d = small_scene().to_dict()
    d.update(patch)
    (tmp_path / "bad.json").write_text(json.dumps(d))
    with pytest.raises(SceneError):
        load_scene(tmp_path / "bad.json")


def test_unreadable_scene(tmp_path):
    with pytest.raises(SceneError):
        load_scene(tmp_path / "missing.json")
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(SceneError):
        load_scene(tmp_path / "junk.json")


def test_missing_height_file(tmp_path):
    d = small_scene().to_dict()
    d["body"]["faces"] = {"0": "nowhere.pgm"}
    (tmp_path / "s.json").write_text(json.dumps(d))
    with pytest.raises(SceneError):
        render_buffers(load_scene(tmp_path / "s.json"))


def test_height_file_faces(tmp_path):
    from terrain_shadow.heightfield import write_pgm

    vals = np.zeros((64, 64))
    write_pgm(tmp_path / "f0.pgm", vals)
    d = small_scene().to_dict()
    d["body"]["faces"] = {"0": "f0.pgm"}
    d["body"]["terrain"] = {"type": "flat", "height": 0.5}
    (tmp_path / "s.json").write_text(json.dumps(d))
    res = render_buffers(load_scene(tmp_path / "s.json"), threads=1)
    assert res.hit.all() and res.image.min() > 0.98

import numpy as np
import pytest

from monohdr import camera as cam
from monohdr import synthdata as sd
from monohdr.camera import CameraParams
from monohdr.imageio import read_pfm, read_ppm, write_pfm, write_ppm


def small(kind="emissive-boxes", **kw):
    return sd.default_dataset(kind, image_size=kw.pop("image_size", 16), n_views=kw.pop("n_views", 4),
                              n_samples=kw.pop("n_samples", 16), **kw)


def test_build_scene_is_deterministic():
    for kind in sd.SCENE_KINDS:
        a = sd.build_scene(sd.SceneSpec(kind=kind, rng_seed=3))
        b = sd.build_scene(sd.SceneSpec(kind=kind, rng_seed=3))
        assert a.density.tobytes() == b.density.tobytes()
        assert a.color.tobytes() == b.color.tobytes()


@pytest.mark.parametrize("kind", sd.SCENE_KINDS)
def test_scene_span_at_least_100(kind):
    assert sd.dynamic_range(sd.build_scene(sd.SceneSpec(kind=kind))) >= 100


def test_unreachable_span_and_bad_inputs_raise():
    with pytest.raises(sd.SceneError):
        sd.build_scene(sd.SceneSpec(kind="gradient-room", span=1e6))
    with pytest.raises(sd.SceneError):
        sd.build_scene(sd.SceneSpec(resolution=4))
    with pytest.raises(sd.SceneError):
        sd.SceneSpec(kind="teapot")


@pytest.fixture(scope="module")
def boxes():
    return sd.default_dataset("emissive-boxes", image_size=32, n_views=8, n_samples=32)


def test_emissive_boxes_clipping_evidence(boxes):
    stats = sd.exposure_stats(boxes)
    assert np.mean([s["saturated"] for s in stats]) >= 0.05
    assert np.mean([s["dark"] for s in stats]) >= 0.05


def test_emissive_boxes_saturates_at_unit_exposure():
    b = small(exposure_index=3)
    assert b.camera.delta_t == 1.0
    sat = cam.is_saturated(b.hdr[b.train_ids], b.camera).any(axis=-1)
    assert sat.mean() >= 0.05


def test_noise_free_ldr_is_the_camera_model(boxes):
    p = boxes.camera
    want = np.clip(p.delta_t / p.g * boxes.hdr + p.i0, 0.0, p.i_max)
    np.testing.assert_array_equal(boxes.ldr, want)


def test_doubling_exposure_doubles_unsaturated_pixels():
    a, b = small(exposure_index=1), small(exposure_index=2)
    np.testing.assert_array_equal(a.hdr, b.hdr)
    unsat = ~cam.is_saturated(b.hdr, b.camera)
    np.testing.assert_allclose(b.ldr[unsat], 2 * a.ldr[unsat], rtol=0, atol=1e-15)


def test_single_exposure_and_default_split():
    b = sd.default_dataset("checker-sphere", image_size=8, n_samples=8)
    assert len(b.train_ids) == 18 and len(b.test_ids) == 17
    assert not set(b.train_ids) & set(b.test_ids)
    assert isinstance(b.manifest["exposure_index"], int)
    assert b.camera.delta_t == b.manifest["exposure_ladder"][b.manifest["exposure_index"]]


def test_poses_circle_spacing_and_targeting():
    poses = sd.sample_poses(4, radius=2.0, elevation_deg=0.0)
    for a, b in zip(poses, poses[1:]):
        assert float(a.forward @ b.forward) == pytest.approx(0.0, abs=1e-12)
    for p in sd.sample_poses(7, target=(0.1, -0.2, 0.3)):
        eye = p.translation
        t = (np.array([0.1, -0.2, 0.3]) - eye) @ p.forward
        np.testing.assert_allclose(eye + t * p.forward, [0.1, -0.2, 0.3], atol=1e-9)
        assert np.abs(p.rotation.T @ p.rotation - np.eye(3)).max() < 1e-12
    with pytest.raises(ValueError):
        sd.sample_poses(1)


def test_regenerate_from_manifest_is_byte_identical(tmp_path):
    b = small(noise_sigma=0.01, seed=4)
    sd.save_dataset(b, tmp_path / "a")
    again = sd.regenerate(sd.load_dataset(tmp_path / "a").manifest)
    sd.save_dataset(again, tmp_path / "b")
    assert sd.dataset_hash(tmp_path / "a") == sd.dataset_hash(tmp_path / "b")


def test_load_matches_quantized(tmp_path):
    b = small()
    sd.save_dataset(b, tmp_path)
    loaded, q = sd.load_dataset(tmp_path), sd.quantized(b)
    np.testing.assert_array_equal(loaded.ldr, q.ldr)
    np.testing.assert_array_equal(loaded.hdr, q.hdr)


def test_noise_changes_ldr_only():
    a, b = small(), small(noise_sigma=0.02)
    np.testing.assert_array_equal(a.hdr, b.hdr)
    assert not np.array_equal(a.ldr, b.ldr)


def test_ppm_pfm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    levels = rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", levels)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm", as_float=False), levels)
    write_ppm(tmp_path / "b.ppm", levels / 255.0)
    np.testing.assert_array_equal(read_ppm(tmp_path / "b.ppm", as_float=False), levels)
    hdr = rng.uniform(0, 1e4, size=(6, 4, 3)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", hdr)
    back = read_pfm(tmp_path / "a.pfm")
    assert back.tobytes() == hdr.tobytes()
    gray = rng.uniform(size=(3, 5)).astype(np.float32)
    write_pfm(tmp_path / "g.pfm", gray)
    assert read_pfm(tmp_path / "g.pfm").tobytes() == gray.tobytes()


def test_pfm_header_and_row_order(tmp_path):
    img = np.zeros((2, 1, 3), np.float32)
    img[0] = 1.0
    write_pfm(tmp_path / "x.pfm", img)
    raw = (tmp_path / "x.pfm").read_bytes()
    assert raw.startswith(b"PF\n1 2\n-1.0\n")
    # bottom row first
    assert np.frombuffer(raw[-24:-12], "<f4").tolist() == [0, 0, 0]


def test_ppm_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "x.ppm", np.zeros((4, 4)))
    (tmp_path / "bad.ppm").write_bytes(b"P6\n2 2\n255\n\x00")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "bad.ppm")


def test_exposure_index_out_of_range():
    with pytest.raises(ValueError):
        sd.make_dataset(sd.SceneSpec(), sd.sample_poses(2, width=4, height=4), CameraParams(), 9)

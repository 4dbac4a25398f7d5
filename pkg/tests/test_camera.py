import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monohdr import camera as cam
from monohdr.camera import CameraParams, ExposureLadder

params_st = st.builds(
    CameraParams,
    delta_t=st.sampled_from(ExposureLadder().times),
    g=st.floats(0.25, 4.0),
    i0=st.floats(0.0, 0.1),
    i_max=st.floats(0.5, 1.0),
)


def reference_ldr(hdr, p, noise=0.0):
    # scalar loop, written without the vectorised helpers
    out = np.empty_like(hdr)
    for i, h in enumerate(hdr.ravel()):
        v = p.delta_t / p.g * h + p.i0 + float(np.ravel(noise)[i] if np.ndim(noise) else noise)
        out.ravel()[i] = min(max(v, 0.0), p.i_max)
    return out


def test_simulate_matches_scalar_reference():
    rng = np.random.default_rng(0)
    p = CameraParams(delta_t=0.5, g=1.3, i0=0.02, i_max=0.9, noise_sigma=0.01)
    hdr = rng.uniform(0, 4, size=200)
    noise = cam.draw_noise(hdr.shape, p, rng)
    np.testing.assert_array_equal(cam.simulate_ldr(hdr, p, noise), reference_ldr(hdr, p, noise))


def test_examples():
    p = CameraParams()
    assert cam.simulate_ldr(0.5, p) == 0.5
    assert cam.simulate_ldr(3.0, p) == 1.0
    assert cam.overflow(3.0, p) == 2.0
    assert cam.overflow(0.5, p) == 0.0
    assert cam.ldr_to_hdr_ideal(1.0, p, overflow_value=2.0) == 3.0


def test_doubling_exposure_doubles_unsaturated_values():
    hdr = np.linspace(0, 0.45, 50)
    a = cam.simulate_ldr(hdr, CameraParams(delta_t=1.0))
    b = cam.simulate_ldr(hdr, CameraParams(delta_t=2.0))
    np.testing.assert_allclose(b, 2 * a, rtol=0, atol=1e-15)


@settings(max_examples=80, deadline=None)
@given(params_st, st.lists(st.floats(0, 50), min_size=1, max_size=30), st.integers(0, 2**31 - 1))
def test_inverse_recovers_hdr_with_true_overflow_and_noise(p, values, seed):
    hdr = np.array(values)
    noise = np.random.default_rng(seed).normal(0, 0.005, size=hdr.shape)
    ideal = cam.ideal_response(hdr, p, noise)
    ok = ideal >= 0  # the lower clamp is not invertible
    rec = cam.ldr_to_hdr_ideal(cam.simulate_ldr(hdr, p, noise), p, cam.overflow(hdr, p, noise), noise)
    np.testing.assert_allclose(rec[ok], hdr[ok], rtol=1e-12, atol=1e-12 * (1 + hdr[ok].max()))


@settings(max_examples=80, deadline=None)
@given(params_st, st.lists(st.floats(0, 50), min_size=1, max_size=30))
def test_scale_plus_offset_equals_forward(p, values):
    hdr = np.array(values)
    d, b = cam.hdr_to_ldr_terms(hdr, p)
    np.testing.assert_allclose(d + b, cam.simulate_ldr(hdr, p), rtol=0, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(params_st, st.lists(st.floats(0, 50), min_size=1, max_size=30))
def test_ldr_range_and_monotone(p, values):
    hdr = np.sort(np.array(values))
    ldr = cam.simulate_ldr(hdr, p)
    assert np.all((ldr >= 0) & (ldr <= p.i_max))
    assert np.all(np.diff(ldr) >= 0)
    sat = cam.is_saturated(hdr, p)
    np.testing.assert_array_equal(ldr[sat], p.i_max)
    np.testing.assert_array_equal(cam.overflow(hdr, p)[~sat], 0.0)


def test_saturation_ceiling():
    p = CameraParams(delta_t=2.0, g=1.0, i0=0.1, i_max=0.9)
    c = cam.saturation_ceiling_hdr(p)
    assert cam.simulate_ldr(c, p) == pytest.approx(0.9)
    assert not cam.is_saturated(c, p)


def test_noise_is_seeded_and_zero_when_sigma_zero():
    p = CameraParams(noise_sigma=0.02, rng_seed=5)
    np.testing.assert_array_equal(cam.draw_noise((4, 3), p), cam.draw_noise((4, 3), p))
    assert not cam.draw_noise((4, 3), CameraParams()).any()


@pytest.mark.parametrize("kw", [{"delta_t": 0}, {"g": -1}, {"i0": 1.0, "i_max": 1.0}, {"noise_sigma": -0.1}])
def test_invalid_params_rejected(kw):
    with pytest.raises(ValueError):
        CameraParams(**kw)


def test_invalid_hdr_rejected():
    with pytest.raises(ValueError):
        cam.simulate_ldr([-0.1], CameraParams())
    with pytest.raises(ValueError):
        cam.simulate_ldr([np.nan], CameraParams())


def test_ladder_validation():
    assert len(ExposureLadder()) == 5
    with pytest.raises(ValueError):
        ExposureLadder((1.0, 0.5))


def test_params_round_trip():
    p = CameraParams(delta_t=0.25, g=2.0, i0=0.01, i_max=0.95, noise_sigma=0.01, rng_seed=3)
    assert CameraParams.from_dict(p.to_dict()) == p

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import lambert_loop
from tactilemap import gelsim
from tactilemap.core import HeightMap, SensorGeometry
from tactilemap.gelsim import ChannelObjectSpec, LightingModel, VirtualProbe


def flat_lights(**kw):
    return LightingModel(ambient=(0.3, 0.3, 0.3), gain=np.ones((16, 16, 3)), **kw)


def test_flat_field_renders_constant():
    lights = flat_lights()
    img = gelsim.render(HeightMap(np.zeros((16, 16))), lights, 0)
    expected = np.clip(np.maximum(0, lights.directions @ [0, 0, 1]) + 0.3, 0, 1)
    assert np.allclose(img.data, expected[None, None, :], atol=1e-7)
    assert np.all(img.data.reshape(-1, 3).var(axis=0) == 0)


def test_noise_free_render_ignores_seed():
    lights = flat_lights()
    a = gelsim.render(HeightMap(np.zeros((16, 16))), lights, 1)
    b = gelsim.render(HeightMap(np.zeros((16, 16))), lights, 2)
    assert a == b


def test_tilted_plane_matches_closed_form_lambert():
    pitch = 0.01
    a = 0.3  # µm of height per µm of travel
    cols = np.arange(16) * pitch * 1000.0
    h = HeightMap(np.tile(a * cols, (16, 1)), pitch)
    lights = LightingModel(ambient=(0.05, 0.05, 0.05), gain=np.ones((16, 16, 3)))
    img = gelsim.render(h, lights, 0)
    n = np.array([-a, 0, 1]) / np.hypot(a, 1)
    expected = np.clip(np.maximum(0, lights.directions @ n) + 0.05, 0, 1)
    assert np.allclose(img.data, expected, atol=1e-6)


def test_render_matches_pixel_loop(rng):
    h = HeightMap(rng.normal(0, 20, (9, 11)), 0.02)
    lights = LightingModel(falloff=0.2)
    img = gelsim.render(h, lights)
    n = gelsim.height_normals(h.data, h.mm_per_pixel)
    ref = lambert_loop(n, lights.directions, lights.gain_map((9, 11)), lights.ambient)
    assert np.allclose(img.data, ref, atol=1e-6)


def test_render_deterministic_given_seed():
    h = HeightMap(np.zeros((8, 8)))
    lights = LightingModel(noise_sigma=0.01)
    assert gelsim.render(h, lights, 7) == gelsim.render(h, lights, 7)
    assert gelsim.render(h, lights, 7) != gelsim.render(h, lights, 8)


def test_sphere_full_depth_geometry():
    geom = SensorGeometry()
    h = gelsim.sphere_imprint((749.5, 749.5), 1.25, 1.25, geom, shape=(1500, 1500))
    assert np.isclose(h.data.min(), -1250.0, atol=1.0)
    radius_px = 1.25 / 0.0077
    dented = np.argwhere(h.data[750] < 0)[:, 0]
    assert abs((dented.max() - dented.min() + 1) / 2 - radius_px) <= 1.0


def test_sphere_zero_depth_is_flat():
    assert not gelsim.sphere_imprint((10, 10), 1.0, 0.0, shape=(20, 20)).data.any()


def test_sphere_apex_normal_is_vertical():
    h = gelsim.sphere_imprint_um((20, 20), 0.2, 0.1, (41, 41), 0.01)
    n = gelsim.height_normals(h, 0.01)
    assert np.allclose(n[20, 20], [0, 0, 1], atol=1e-12)


@given(st.floats(0.1, 2.0), st.floats(0.0, 1.0))
def test_sphere_is_radially_symmetric(radius, frac):
    depth = radius * frac
    h = gelsim.sphere_imprint_um((15, 15), radius, depth, (31, 31), 0.05)
    # pixels related by the 8 symmetries of the square lie at the same rho
    for t in (h.T, h[::-1], h[:, ::-1], h[::-1, ::-1]):
        assert np.max(np.abs(t - h)) <= 1e-9


def test_straight_channel_is_exact_square_wave():
    spec = ChannelObjectSpec("straight", 500.0, 96.0)
    h = gelsim.channel_object(spec, SensorGeometry())
    row = h.data[700]
    assert set(np.unique(row)) == {-96.0, 0.0}
    assert np.all(h.data == row[None, :])


def test_circular_channel_radial_square_wave():
    spec = ChannelObjectSpec("circular", 350.0, 12.0)
    h = gelsim.channel_object(spec, SensorGeometry(), shape=(301, 301))
    ray = h.data[150, 150:]
    assert set(np.unique(ray)) == {-12.0, 0.0}
    assert np.allclose(h.data, h.data.T)


def test_zero_depth_channel_is_flat():
    assert not gelsim.channel_object(ChannelObjectSpec("straight", 500, 0), shape=(20, 20)).data.any()


def test_spec_round_trip_and_validation():
    s = ChannelObjectSpec("circular", 350, 36, center_px=(5.0, 6.0))
    assert ChannelObjectSpec.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError):
        ChannelObjectSpec("wavy", 1, 1)
    assert len(gelsim.standard_objects()) == 8


def probe(z, noise=0.0, seed=0):
    return VirtualProbe(HeightMap(np.zeros((40, 40)), 0.02), 0.3, (20, 20),
                        LightingModel(noise_sigma=noise), z_mm=z, surface_z_mm=0.0, seed=seed)


def test_probe_above_surface_sees_undeformed_gel():
    frames = gelsim.probe_capture(probe(1.0, noise=0.01), 3)
    ref = gelsim.render(HeightMap(np.zeros((40, 40)), 0.02), LightingModel())
    assert len(frames) == 3
    for f in frames:
        assert np.abs(f.data - ref.data).std() < 0.02


def test_noise_free_captures_identical():
    frames = gelsim.probe_capture(probe(1.0), 5)
    assert all(f == frames[0] for f in frames)


def test_contact_changes_the_image():
    untouched = gelsim.probe_capture(probe(1.0), 1)[0].data.astype(float)
    touched = gelsim.probe_capture(probe(-0.1), 1)[0].data.astype(float)
    mse = sum(((a - b) ** 2) for a, b in zip(touched.ravel(), untouched.ravel())) / touched.size
    assert mse > 0

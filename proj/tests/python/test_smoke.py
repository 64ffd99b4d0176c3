"""Smoke tests for the python bindings: shapes, ranges, and a few closed forms
cross-checked against numpy."""

import math

import numpy as np
import pytest

import mvdpp


def test_linear_schedule_identities():
    s = mvdpp.linear_schedule(T=1000, zero_snr=False)
    beta = np.asarray(s["beta"])
    alpha_bar = np.asarray(s["alpha_bar"])
    assert beta.shape == (1000,)
    # alpha_bar is the running product of (1 - beta)
    np.testing.assert_allclose(alpha_bar, np.cumprod(1.0 - beta), rtol=1e-12)
    assert np.all(np.diff(alpha_bar) < 0)

    z = mvdpp.linear_schedule(T=1000, zero_snr=True)
    assert np.asarray(z["alpha_t"])[-1] == 0.0


def test_snr_monotone():
    vals = [mvdpp.snr(t) for t in range(0, 1000, 111)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_step_sequence():
    ts = mvdpp.step_sequence(1000, 4)
    assert ts == [999, 749, 499, 249]
    assert mvdpp.step_sequence(1000, 1000)[-1] == 0


def test_camera_pose_geometry():
    p = mvdpp.camera_pose(azimuth_deg=0.0, elevation_deg=0.0, distance=2.5)
    center = np.asarray(p["center"])
    forward = np.asarray(p["forward"])
    assert center == pytest.approx([2.5, 0.0, 0.0], abs=1e-12)
    # forward points at the origin
    np.testing.assert_allclose(forward, -center / np.linalg.norm(center), atol=1e-12)


def test_generation_view_grid():
    grid = mvdpp.generation_view_grid()
    assert len(grid) == 32
    elevations = sorted({round(el, 6) for _, el, _ in grid})
    assert elevations == [-30.0, 0.0, 30.0, 60.0]


def test_render_and_mask():
    rgb, mask = mvdpp.render_object(seed=3, azimuth_deg=30.0, elevation_deg=20.0, distance=2.5)
    assert rgb.shape == (64, 64, 3)
    assert mask.shape == (64, 64)
    assert rgb.min() >= 0.0 and rgb.max() <= 1.0
    assert set(np.unique(mask)).issubset({0, 1})
    assert mask.sum() > 0
    # background is white where the mask is empty
    assert np.all(rgb[mask == 0] == 1.0)


def test_render_deterministic():
    a, am = mvdpp.render_object(seed=5, azimuth_deg=10.0, elevation_deg=0.0, distance=2.5)
    b, bm = mvdpp.render_object(seed=5, azimuth_deg=10.0, elevation_deg=0.0, distance=2.5)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(am, bm)


def test_carve_contains_object():
    grid = mvdpp.generation_view_grid()
    masks = []
    for az, el, dist in grid:
        _, m = mvdpp.render_object(seed=7, azimuth_deg=az, elevation_deg=el, distance=dist)
        masks.append(m)
    hull = mvdpp.carve(np.stack(masks), grid, res=32)
    gt = mvdpp.voxelize_object(seed=7, res=32)
    assert hull.shape == (32, 32, 32)
    inter = np.logical_and(hull, gt).sum()
    union = np.logical_or(hull, gt).sum()
    assert inter / union > 0.5


def test_psnr_ssim_closed_forms():
    a = np.full((16, 16, 3), 0.5, dtype=np.float32)
    b = np.full((16, 16, 3), 0.6, dtype=np.float32)
    assert mvdpp.psnr(a, b) == pytest.approx(20.0, abs=1e-4)
    assert math.isinf(mvdpp.psnr(a, a))
    rng = np.random.default_rng(0)
    x = rng.random((24, 24, 3), dtype=np.float32)
    assert mvdpp.ssim(x, x) == pytest.approx(1.0, abs=1e-9)


def test_chamfer_closed_form():
    a = np.zeros((4, 3))
    b = a + np.array([0.5, 0.0, 0.0])
    a[:, 1] = np.arange(4) * 10.0  # spread so nearest neighbors pair up
    b[:, 1] = np.arange(4) * 10.0
    assert mvdpp.chamfer(a, b) == pytest.approx(0.5, abs=1e-12)


def test_dropout_views():
    kept = mvdpp.dropout_views(8, 3, seed=1)
    assert len(kept) == 3
    assert kept == sorted(kept)
    assert all(0 <= k < 8 for k in kept)
    assert mvdpp.dropout_views(8, 8, seed=2) == list(range(8))


def test_sample_conditions():
    assert mvdpp.sample_conditions(False, seed=0) == [0]
    singles = sum(mvdpp.sample_conditions(True, seed=s) == [0] for s in range(400))
    assert 120 < singles < 280


def test_build_dataset(tmp_path):
    n = mvdpp.build_dataset(str(tmp_path / "ds"), n_objects=2, grid_res=16, seed=0)
    assert n == 2
    assert (tmp_path / "ds" / "manifest.json").exists()

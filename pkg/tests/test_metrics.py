"""Image and geometric metric tests against literal reimplementations."""

import numpy as np
import pytest

from splatscan.gaussians import GaussianMap
from splatscan.geometry import PinholeIntrinsics
from splatscan.metrics import (
    PSNR_CAP_DB,
    depth_l1_cm,
    evaluate_geometry,
    evaluate_rendering,
    geometric_metrics,
    orbit_poses,
    psnr,
    ssim,
)


class TestPsnr:
    def test_identical_images_hit_cap(self):
        img = np.random.default_rng(0).uniform(size=(8, 8, 3))
        assert psnr(img, img) == PSNR_CAP_DB

    def test_known_mse(self):
        a = np.full((10, 10), 0.5)
        b = np.full((10, 10), 0.6)
        # mse = 0.01 -> 10 log10(100) = 20 dB
        assert psnr(a, b) == pytest.approx(20.0)

    def test_monotone_in_error(self):
        rng = np.random.default_rng(1)
        ref = rng.uniform(size=(16, 16, 3))
        prev = np.inf
        for scale in (0.01, 0.05, 0.2):
            noisy = np.clip(ref + scale, 0.0, 1.0)
            val = psnr(noisy, ref)
            assert val < prev
            prev = val

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def ssim_by_loops(x, y, win=11, sigma=1.5, k1=0.01, k2=0.03):
    """Windowed SSIM computed with explicit loops over valid positions."""
    half = win // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = k1**2, k2**2
    h, wid = x.shape
    vals = []
    for i in range(half, h - half):
        for j in range(half, wid - half):
            px = x[i - half:i + half + 1, j - half:j + half + 1]
            py = y[i - half:i + half + 1, j - half:j + half + 1]
            mx = (w * px).sum()
            my = (w * py).sum()
            vx = (w * px * px).sum() - mx * mx
            vy = (w * py * py).sum() - my * my
            cov = (w * px * py).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


class TestSsim:
    def test_identical_images_score_one(self):
        img = np.random.default_rng(2).uniform(size=(16, 16))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_loop_reference(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=(18, 16))
        y = np.clip(x + rng.normal(0.0, 0.1, x.shape), 0.0, 1.0)
        assert ssim(x, y) == pytest.approx(ssim_by_loops(x, y), abs=1e-12)

    def test_uniform_images_closed_form(self):
        a = np.full((16, 16), 0.2)
        b = np.full((16, 16), 0.4)
        # zero variance: ssim = (2ab + c1) / (a^2 + b^2 + c1)
        expected = (2 * 0.2 * 0.4 + 1e-4) / (0.2**2 + 0.4**2 + 1e-4)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-12)

    def test_color_averages_channels(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(16, 16, 3))
        y = rng.uniform(size=(16, 16, 3))
        per_channel = [ssim(x[..., c], y[..., c]) for c in range(3)]
        assert ssim(x, y) == pytest.approx(np.mean(per_channel), abs=1e-12)

    def test_too_small_image_raises(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))


class TestDepthL1:
    def test_hand_case_skips_invalid_reference(self):
        depth = np.array([[1.0, 2.0], [3.0, 4.0]])
        ref = np.array([[1.1, 0.0], [2.8, 4.0]])
        # valid pixels: |1-1.1|, |3-2.8|, |4-4| -> mean 0.1 m = 10 cm
        assert depth_l1_cm(depth, ref) == pytest.approx(10.0)

    def test_empty_reference(self):
        assert depth_l1_cm(np.ones((3, 3)), np.zeros((3, 3))) == 0.0


def brute_nearest(a, b):
    return np.array([np.min(np.linalg.norm(b - p, axis=1)) for p in a])


class TestGeometricMetrics:
    def test_hand_case(self):
        gt = np.array([[0.0, 0.0, 0.0]])
        mp = np.array([[0.03, 0.0, 0.0]])
        m = geometric_metrics(mp, gt)
        assert m["accuracy_cm"] == pytest.approx(3.0)
        assert m["completion_cm"] == pytest.approx(3.0)
        assert m["completion_ratio_pct"] == {"5": 100.0, "20": 100.0}

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        mp = rng.uniform(-1.0, 1.0, (60, 3))
        gt = rng.uniform(-1.0, 1.0, (90, 3))
        m = geometric_metrics(mp, gt, thresholds_cm=(5.0, 20.0, 50.0))
        acc = brute_nearest(mp, gt) * 100.0
        comp = brute_nearest(gt, mp) * 100.0
        assert m["accuracy_cm"] == pytest.approx(acc.mean())
        assert m["completion_cm"] == pytest.approx(comp.mean())
        for t in (5.0, 20.0, 50.0):
            assert m["completion_ratio_pct"][f"{t:g}"] == pytest.approx(
                (comp < t).mean() * 100.0)
        assert m["n_map_points"] == 60 and m["n_gt_points"] == 90

    def test_thresholds_are_strict(self):
        gt = np.array([[0.0, 0.0, 0.0]])
        mp = np.array([[0.05, 0.0, 0.0]])  # exactly 5 cm away
        m = geometric_metrics(mp, gt)
        assert m["completion_ratio_pct"]["5"] == 0.0
        assert m["completion_ratio_pct"]["20"] == 100.0

    def test_empty_inputs(self):
        m = geometric_metrics(np.zeros((0, 3)), np.zeros((5, 3)))
        assert m["accuracy_cm"] is None and m["completion_cm"] is None
        assert m["completion_ratio_pct"]["5"] == 0.0
        assert m["n_map_points"] == 0 and m["n_gt_points"] == 5


class TestOrbitPoses:
    @pytest.mark.parametrize("n_views", [6, 10, 36])
    def test_exact_count_and_clearance(self, two_room_scene, n_views):
        poses = orbit_poses(two_room_scene, n_views)
        assert len(poses) == n_views
        for pose in poses:
            assert not two_room_scene.segment_collides(pose.center, pose.center, 0.1)

    def test_views_alternate_rooms_and_look_at_centers(self, two_room_scene):
        poses = orbit_poses(two_room_scene, 8)
        for i, pose in enumerate(poses):
            lo, hi = two_room_scene.rooms[i % 2]
            center = 0.5 * (np.asarray(lo) + np.asarray(hi))
            assert np.all(pose.center[:2] >= lo[:2]) and np.all(pose.center[:2] <= hi[:2])
            to_center = center - pose.center
            to_center /= np.linalg.norm(to_center)
            np.testing.assert_allclose(pose.forward, to_center, atol=1e-9)

    def test_single_room_scene(self, one_room_scene):
        poses = orbit_poses(one_room_scene, 12)
        assert len(poses) == 12

    def test_deterministic(self, two_room_scene):
        a = orbit_poses(two_room_scene, 10)
        b = orbit_poses(two_room_scene, 10)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.rotation, pb.rotation)
            np.testing.assert_array_equal(pa.translation, pb.translation)


class TestEvaluators:
    def test_geometry_of_gt_sampled_map_is_nearly_perfect(self, one_room_scene):
        pts = one_room_scene.sample_gt_points(4000, seed=3)
        gmap = GaussianMap(centers=pts, colors=np.full((4000, 3), 0.5),
                           radii=np.full(4000, 0.02),
                           opacities=np.full(4000, 0.9))
        # accuracy is floored by GT sampling density (~3.5 cm spacing at 50k
        # points over the room's surfaces), not by map error
        m = evaluate_geometry(gmap, one_room_scene, n_points=50_000, seed=4)
        assert m["accuracy_cm"] < 2.5
        assert m["completion_ratio_pct"]["20"] > 99.0

    def test_rendering_report_schema(self, one_room_scene):
        rng = np.random.default_rng(5)
        pts = one_room_scene.sample_gt_points(500, seed=6)
        gmap = GaussianMap(centers=pts, colors=rng.uniform(size=(500, 3)),
                           radii=np.full(500, 0.05), opacities=np.full(500, 0.8))
        intr = PinholeIntrinsics.from_fov(16, 16, 90.0)
        report = evaluate_rendering(gmap, one_room_scene, intr, n_views=4)
        assert set(report) == {"psnr_db", "ssim", "depth_l1_cm", "n_views"}
        assert report["n_views"] == 4
        assert np.isfinite(report["psnr_db"]) and np.isfinite(report["ssim"])
        assert report["depth_l1_cm"] >= 0.0

"""Camera model tests: pose algebra, intrinsics scaling, frame subsampling."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from splatscan.geometry import (
    CameraPose,
    PinholeIntrinsics,
    RgbdFrame,
    look_at,
    yaw_pose,
)


def _random_rotation(seed: int) -> np.ndarray:
    return Rotation.random(rng=np.random.default_rng(seed)).as_matrix()


class TestCameraPose:
    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(ValueError):
            CameraPose(rotation=np.eye(3) * 1.5, translation=np.zeros(3))

    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            CameraPose(rotation=r, translation=np.zeros(3))

    @given(st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_world_camera_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        pose = CameraPose(rotation=_random_rotation(seed), translation=rng.normal(size=3))
        pts = rng.normal(size=(7, 3))
        back = pose.camera_to_world(pose.world_to_camera(pts))
        np.testing.assert_allclose(back, pts, atol=1e-12)

    @given(st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_center_maps_to_camera_origin(self, seed):
        rng = np.random.default_rng(seed)
        pose = CameraPose(rotation=_random_rotation(seed), translation=rng.normal(size=3))
        np.testing.assert_allclose(pose.world_to_camera(pose.center), np.zeros(3), atol=1e-12)

    def test_matrix_is_homogeneous_transform(self):
        pose = CameraPose(rotation=_random_rotation(3), translation=np.array([1.0, 2.0, 3.0]))
        m = pose.matrix()
        p = np.array([0.4, -0.2, 1.7, 1.0])
        np.testing.assert_allclose((m @ p)[:3], pose.world_to_camera(p[:3]), atol=1e-12)


class TestLookAt:
    def test_camera_sits_at_position(self):
        pose = look_at([1.0, 2.0, 1.5], [4.0, 2.0, 1.5])
        np.testing.assert_allclose(pose.center, [1.0, 2.0, 1.5], atol=1e-12)

    def test_forward_points_at_target(self):
        position = np.array([0.5, -1.0, 2.0])
        target = np.array([3.0, 1.0, 0.5])
        pose = look_at(position, target)
        expect = (target - position) / np.linalg.norm(target - position)
        np.testing.assert_allclose(pose.forward, expect, atol=1e-12)

    def test_horizontal_view_keeps_image_upright(self):
        # World +z should project "up" in the image, i.e. camera +y (row axis,
        # pointing down) has a negative z component.
        pose = look_at([0.0, 0.0, 1.0], [5.0, 0.0, 1.0])
        assert pose.rotation[1] @ np.array([0.0, 0.0, 1.0]) < -0.99

    def test_degenerate_target_raises(self):
        with pytest.raises(ValueError):
            look_at([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])

    def test_vertical_view_still_valid(self):
        pose = look_at([0.0, 0.0, 1.0], [0.0, 0.0, 5.0])
        np.testing.assert_allclose(pose.forward, [0.0, 0.0, 1.0], atol=1e-9)


class TestYawPose:
    def test_zero_yaw_faces_positive_x(self):
        pose = yaw_pose([1.0, 1.0, 1.2], 0.0)
        np.testing.assert_allclose(pose.forward, [1.0, 0.0, 0.0], atol=1e-12)

    def test_quarter_turn_faces_positive_y(self):
        pose = yaw_pose([0.0, 0.0, 1.2], np.pi / 2.0)
        np.testing.assert_allclose(pose.forward, [0.0, 1.0, 0.0], atol=1e-12)

    def test_positive_pitch_looks_down(self):
        pose = yaw_pose([0.0, 0.0, 1.2], 0.0, pitch=np.radians(30.0))
        assert pose.forward[2] == pytest.approx(-0.5, abs=1e-12)


class TestIntrinsics:
    def test_from_fov_90_deg_focal(self):
        intr = PinholeIntrinsics.from_fov(64, 64, 90.0)
        assert intr.fx == pytest.approx(32.0)
        assert intr.fy == pytest.approx(32.0)
        assert intr.cx == 32.0 and intr.cy == 32.0

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ValueError):
            PinholeIntrinsics(width=0, height=4, fx=1.0, fy=1.0, cx=0.0, cy=0.0)

    def test_rejects_principal_point_outside_image(self):
        with pytest.raises(ValueError):
            PinholeIntrinsics(width=4, height=4, fx=1.0, fy=1.0, cx=4.0, cy=0.0)

    def test_center_ray_is_optical_axis(self):
        # cx = cy = 32 sits exactly on pixel (32, 32) at integer pixel centers
        intr = PinholeIntrinsics.from_fov(64, 64, 90.0)
        dirs = intr.ray_directions()
        np.testing.assert_allclose(dirs[32, 32], [0.0, 0.0, 1.0], atol=1e-9)
        # ray param equals z-depth: all directions have unit z
        np.testing.assert_allclose(dirs[..., 2], 1.0)

    @pytest.mark.parametrize("divisor,offset", [(2, (0, 0)), (4, (0, 0)), (4, (1, 3)), (3, (2, 1))])
    def test_scaled_projection_consistency(self, divisor, offset):
        # A world point that lands on full-res pixel (oy + i*d, ox + j*d) must
        # land on pixel (i, j) of the subsampled intrinsics.
        intr = PinholeIntrinsics.from_fov(64, 48, 90.0)
        sub = intr.scaled(divisor, offset)
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50),
                               rng.uniform(1.0, 4.0, 50)])
        u_full = intr.fx * pts[:, 0] / pts[:, 2] + intr.cx
        v_full = intr.fy * pts[:, 1] / pts[:, 2] + intr.cy
        u_sub = sub.fx * pts[:, 0] / pts[:, 2] + sub.cx
        v_sub = sub.fy * pts[:, 1] / pts[:, 2] + sub.cy
        np.testing.assert_allclose(u_sub, (u_full - offset[1]) / divisor, atol=1e-12)
        np.testing.assert_allclose(v_sub, (v_full - offset[0]) / divisor, atol=1e-12)

    def test_scaled_rejects_offset_outside_stride(self):
        intr = PinholeIntrinsics.from_fov(64, 64, 90.0)
        with pytest.raises(ValueError):
            intr.scaled(4, (4, 0))

    def test_back_project_depth_one_gives_rays(self):
        intr = PinholeIntrinsics.from_fov(8, 8, 90.0)
        pose = CameraPose(rotation=np.eye(3), translation=np.zeros(3))
        pts = intr.back_project(np.ones((8, 8)), pose).reshape(8, 8, 3)
        np.testing.assert_allclose(pts, intr.ray_directions(), atol=1e-12)

    def test_back_project_respects_pose(self):
        intr = PinholeIntrinsics.from_fov(8, 8, 90.0)
        pose = look_at([1.0, 2.0, 1.0], [1.0, 5.0, 1.0])
        depth = np.full((8, 8), 2.0)
        pts = intr.back_project(depth, pose).reshape(8, 8, 3)
        # pixel (4, 4) is on the optical axis: 2 m straight along forward
        np.testing.assert_allclose(pts[4, 4], [1.0, 4.0, 1.0], atol=1e-9)


class TestRgbdFrame:
    def _frame(self, h=8, w=8):
        intr = PinholeIntrinsics.from_fov(w, h, 90.0)
        pose = CameraPose(rotation=np.eye(3), translation=np.zeros(3))
        rng = np.random.default_rng(1)
        return RgbdFrame(color=rng.uniform(0, 1, (h, w, 3)),
                         depth=rng.uniform(0.5, 3.0, (h, w)),
                         pose=pose, intrinsics=intr, step_index=5)

    def test_shape_mismatch_raises(self):
        frame = self._frame()
        with pytest.raises(ValueError):
            RgbdFrame(color=frame.color[:4], depth=frame.depth, pose=frame.pose,
                      intrinsics=frame.intrinsics, step_index=0)

    def test_subsample_slices_match(self):
        frame = self._frame()
        sub = frame.subsample(2, (1, 0))
        np.testing.assert_array_equal(sub.color, frame.color[1::2, 0::2])
        np.testing.assert_array_equal(sub.depth, frame.depth[1::2, 0::2])
        assert sub.intrinsics.width == 4 and sub.intrinsics.height == 4

    def test_subsample_offsets_partition_pixels(self):
        frame = self._frame()
        seen = np.zeros((8, 8), dtype=int)
        for oy in range(2):
            for ox in range(2):
                sub = frame.subsample(2, (oy, ox))
                seen[oy::2, ox::2] += 1
                assert sub.depth.size == 16
        np.testing.assert_array_equal(seen, np.ones((8, 8), dtype=int))

    def test_subsample_backprojection_matches_full(self):
        # Back-projecting the subsampled frame must give exactly the world
        # points of the kept full-resolution pixels.
        frame = self._frame()
        full = frame.intrinsics.back_project(frame.depth, frame.pose).reshape(8, 8, 3)
        sub = frame.subsample(4, (2, 1))
        pts = sub.intrinsics.back_project(sub.depth, sub.pose).reshape(
            sub.intrinsics.height, sub.intrinsics.width, 3)
        np.testing.assert_allclose(pts, full[2::4, 1::4], atol=1e-12)

    def test_subsample_identity(self):
        frame = self._frame()
        assert frame.subsample(1) is frame

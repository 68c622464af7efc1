"""Camera geometry: poses, pinhole intrinsics, RGB-D frames.

Conventions used throughout the package:

* World frame is z-up; the floor's interior surface sits at z = 0.
* A pose maps world to camera coordinates, ``x_cam = R @ x_world + t``, with
  camera axes +x right, +y down, +z forward (optical axis).
* Pixel (row i, col j) has image coordinates (u, v) = (j, i); pixel centers
  lie on integer coordinates, so the ray through pixel (i, j) has camera-frame
  direction ((j - cx) / fx, (i - cy) / fy, 1).  With that scaling the ray
  parameter at a surface hit equals the z-depth stored in depth maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WORLD_UP = np.array([0.0, 0.0, 1.0])

_ORTHO_TOL = 1e-9


@dataclass
class CameraPose:
    """World-to-camera rigid transform: x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {self.rotation.shape}")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R R^T - I| = {err:.3e})")
        if np.linalg.det(self.rotation) < 0.0:
            raise ValueError("rotation has negative determinant (reflection)")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T t)."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Optical axis (camera +z) expressed in world coordinates."""
        return self.rotation[2].copy()

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous world-to-camera matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass
class PinholeIntrinsics:
    """Pinhole camera model with pixel-center sampling at integer coordinates."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 <= self.cx < self.width):
            raise ValueError(f"cx = {self.cx} outside [0, {self.width})")
        if not (0.0 <= self.cy < self.height):
            raise ValueError(f"cy = {self.cy} outside [0, {self.height})")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "PinholeIntrinsics":
        """Square-pixel intrinsics from a horizontal field of view."""
        if not (0.0 < hfov_deg < 180.0):
            raise ValueError("horizontal FOV must lie in (0, 180) degrees")
        f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(width=width, height=height, fx=f, fy=f, cx=width / 2.0, cy=height / 2.0)

    def scaled(self, divisor: int, offset: tuple[int, int] = (0, 0)) -> "PinholeIntrinsics":
        """Intrinsics for an image subsampled by an integer stride.

        Keeping pixels (oy + i * divisor, ox + j * divisor) maps pixel (i, j)
        of the small image to that grid, so focal lengths scale by 1 / divisor
        and the principal point shifts by the phase offset before scaling.
        """
        if divisor < 1:
            raise ValueError("divisor must be >= 1")
        oy, ox = offset
        if not (0 <= ox < divisor and 0 <= oy < divisor):
            raise ValueError("offset components must lie in [0, divisor)")
        return PinholeIntrinsics(
            width=-(-(self.width - ox) // divisor),
            height=-(-(self.height - oy) // divisor),
            fx=self.fx / divisor,
            fy=self.fy / divisor,
            cx=(self.cx - ox) / divisor,
            cy=(self.cy - oy) / divisor,
        )

    def ray_directions(self) -> np.ndarray:
        """Camera-frame ray directions, shape (H, W, 3), z-component 1."""
        j = np.arange(self.width, dtype=np.float64)
        i = np.arange(self.height, dtype=np.float64)
        x = (j - self.cx) / self.fx
        y = (i - self.cy) / self.fy
        dirs = np.empty((self.height, self.width, 3))
        dirs[..., 0] = x[None, :]
        dirs[..., 1] = y[:, None]
        dirs[..., 2] = 1.0
        return dirs

    def back_project(self, depth: np.ndarray, pose: CameraPose) -> np.ndarray:
        """World-frame points for every pixel of a z-depth map, shape (H, W, 3).

        Pixels with depth 0 (no return) map to the camera center; callers mask
        them out with ``depth > 0``.
        """
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != (self.height, self.width):
            raise ValueError(f"depth shape {depth.shape} != {(self.height, self.width)}")
        cam = self.ray_directions() * depth[..., None]
        return cam.reshape(-1, 3) @ pose.rotation + pose.center


@dataclass
class RgbdFrame:
    """One posed RGB-D observation. color in [0,1]^3, depth in meters (0 = no return)."""

    color: np.ndarray
    depth: np.ndarray
    pose: CameraPose
    intrinsics: PinholeIntrinsics
    step_index: int = 0

    def __post_init__(self) -> None:
        self.color = np.asarray(self.color, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.color.shape != (h, w, 3):
            raise ValueError(f"color shape {self.color.shape} != {(h, w, 3)}")
        if self.depth.shape != (h, w):
            raise ValueError(f"depth shape {self.depth.shape} != {(h, w)}")
        if self.color.min() < 0.0 or self.color.max() > 1.0:
            raise ValueError("color values must lie in [0, 1]")
        if self.depth.min() < 0.0:
            raise ValueError("depth values must be non-negative")

    def subsample(self, divisor: int, offset: tuple[int, int] = (0, 0)) -> "RgbdFrame":
        """Strided subsampling (no averaging) with consistently scaled intrinsics.

        ``offset`` is a (row, column) phase in [0, divisor); varying it across
        calls lets repeated subsampling visit every pixel of the full grid.
        """
        if divisor == 1 and offset == (0, 0):
            return self
        oy, ox = offset
        return RgbdFrame(
            color=self.color[oy::divisor, ox::divisor],
            depth=self.depth[oy::divisor, ox::divisor],
            pose=self.pose,
            intrinsics=self.intrinsics.scaled(divisor, offset),
            step_index=self.step_index,
        )


def look_at(position: np.ndarray, target: np.ndarray) -> CameraPose:
    """Pose at ``position`` with the optical axis through ``target``, world-up z.

    Near the poles (optical axis within ~1e-9 of vertical) the roll is fixed
    using world-x as the up hint instead.
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    fwd = target - position
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ValueError("look_at target coincides with camera position")
    fwd = fwd / norm
    up = WORLD_UP
    if abs(float(fwd @ up)) > 1.0 - 1e-9:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rotation = np.stack([right, down, fwd])
    return CameraPose(rotation=rotation, translation=-rotation @ position)


def yaw_pose(position: np.ndarray, yaw: float, pitch: float = 0.0) -> CameraPose:
    """Pose from a position, heading angle in the xy-plane, and pitch (down > 0)."""
    position = np.asarray(position, dtype=np.float64).reshape(3)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    fwd = np.array([cy * cp, sy * cp, -sp])
    return look_at(position, position + fwd)

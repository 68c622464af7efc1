"""Reconstruction quality metrics: image (PSNR/SSIM/depth-L1) and geometric.

Geometric metrics compare the map's point cloud (splat centers above an
opacity threshold) against dense ground-truth surface samples: accuracy is the
mean map-to-GT nearest-neighbor distance, completion the mean GT-to-map
distance (both cm), completion ratio the share of GT points with a map point
within a threshold.  Rendering metrics average over a fixed orbit of
evaluation poses circling the scene interior.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .gaussians import GaussianMap
from .geometry import CameraPose, PinholeIntrinsics, look_at
from .rasterize import render
from .scene import SceneModel

PSNR_CAP_DB = 99.0

_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_SIGMA = 1.5
_SSIM_WIN = 11


def psnr(image: np.ndarray, reference: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 99."""
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise ValueError("psnr inputs must share a shape")
    mse = float(np.mean((image - reference) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_CAP_DB)


def _ssim_window() -> np.ndarray:
    half = _SSIM_WIN // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords**2) / (2.0 * _SSIM_SIGMA**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(image: np.ndarray, reference: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5), L = 1.

    Statistics are averaged over the region where the window fits entirely
    inside the image; channels are averaged for color input.
    """
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise ValueError("ssim inputs must share a shape")
    if image.ndim == 2:
        image = image[..., None]
        reference = reference[..., None]
    half = _SSIM_WIN // 2
    if image.shape[0] < _SSIM_WIN or image.shape[1] < _SSIM_WIN:
        raise ValueError("image smaller than the SSIM window")
    win = _ssim_window()
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2

    def filt(x: np.ndarray) -> np.ndarray:
        out = ndimage.correlate(x, win, mode="constant")
        return out[half:-half, half:-half]

    vals = []
    for ch in range(image.shape[2]):
        x = image[..., ch]
        y = reference[..., ch]
        mu_x = filt(x)
        mu_y = filt(y)
        var_x = filt(x * x) - mu_x**2
        var_y = filt(y * y) - mu_y**2
        cov = filt(x * y) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def depth_l1_cm(depth: np.ndarray, reference: np.ndarray) -> float:
    """Mean |depth - reference| in cm over pixels where the reference is valid."""
    depth = np.asarray(depth, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    valid = reference > 0.0
    if not valid.any():
        return 0.0
    return float(np.abs(depth - reference)[valid].mean() * 100.0)


def geometric_metrics(
    map_points: np.ndarray,
    gt_points: np.ndarray,
    thresholds_cm: tuple[float, ...] = (5.0, 20.0),
) -> dict:
    """Accuracy / completion (cm) and completion ratio (%) between point sets."""
    map_points = np.asarray(map_points, dtype=np.float64).reshape(-1, 3)
    gt_points = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if map_points.shape[0] == 0 or gt_points.shape[0] == 0:
        return {
            "accuracy_cm": None,
            "completion_cm": None,
            "completion_ratio_pct": {f"{t:g}": 0.0 for t in thresholds_cm},
            "n_map_points": int(map_points.shape[0]),
            "n_gt_points": int(gt_points.shape[0]),
        }
    d_map_to_gt, _ = cKDTree(gt_points).query(map_points, k=1)
    d_gt_to_map, _ = cKDTree(map_points).query(gt_points, k=1)
    d_gt_to_map_cm = d_gt_to_map * 100.0
    return {
        "accuracy_cm": float(d_map_to_gt.mean() * 100.0),
        "completion_cm": float(d_gt_to_map_cm.mean()),
        "completion_ratio_pct": {
            f"{t:g}": float((d_gt_to_map_cm < t).mean() * 100.0) for t in thresholds_cm
        },
        "n_map_points": int(map_points.shape[0]),
        "n_gt_points": int(gt_points.shape[0]),
    }


def orbit_poses(scene: SceneModel, n_views: int = 36) -> list[CameraPose]:
    """Evaluation rig: poses on room-centered circles, looking at the room center.

    Views are assigned to rooms round-robin; within a room they spread
    uniformly in angle.  Each position starts at 35% of the room's smaller
    horizontal extent and shrinks independently toward the center until it
    clears scene geometry, so cluttered rooms still yield exactly n_views
    poses.
    """
    n_rooms = len(scene.rooms)
    per_room: list[list[int]] = [[] for _ in range(n_rooms)]
    for i in range(n_views):
        per_room[i % n_rooms].append(i)
    poses: list[CameraPose | None] = [None] * n_views
    for room_index, view_ids in enumerate(per_room):
        lo, hi = scene.rooms[room_index]
        center = (np.asarray(lo) + np.asarray(hi)) / 2.0
        extent = min(hi[0] - lo[0], hi[1] - lo[1])
        for k, view_id in enumerate(view_ids):
            angle = 2.0 * np.pi * k / max(len(view_ids), 1)
            ring = np.array([np.cos(angle), np.sin(angle), 0.0])
            for frac in (0.35, 0.30, 0.25, 0.20, 0.15, 0.10, 0.05):
                p = center + frac * extent * ring
                if not scene.segment_collides(p, p, 0.1):
                    poses[view_id] = look_at(p, center)
                    break
            else:
                raise ValueError("no clear orbit position; room interior too cluttered")
    return [p for p in poses if p is not None]


def evaluate_geometry(
    gmap: GaussianMap,
    scene: SceneModel,
    n_points: int = 100_000,
    seed: int = 0,
    thresholds_cm: tuple[float, ...] = (5.0, 20.0),
    min_opacity: float = 0.5,
) -> dict:
    gt = scene.sample_gt_points(n_points, seed)
    return geometric_metrics(gmap.point_cloud(min_opacity), gt, thresholds_cm)


def evaluate_rendering(
    gmap: GaussianMap,
    scene: SceneModel,
    intrinsics: PinholeIntrinsics,
    n_views: int = 36,
    max_range: float | None = None,
    eps_t: float = 1e-4,
) -> dict:
    poses = orbit_poses(scene, n_views)
    psnrs, ssims, depth_errs = [], [], []
    for pose in poses:
        gt = scene.render_rgbd(pose, intrinsics, max_range=max_range)
        out = render(gmap, pose, intrinsics, eps_t=eps_t)
        psnrs.append(psnr(out.color, gt.color))
        ssims.append(ssim(out.color, gt.color))
        depth_errs.append(depth_l1_cm(out.depth, gt.depth))
    return {
        "psnr_db": float(np.mean(psnrs)),
        "ssim": float(np.mean(ssims)),
        "depth_l1_cm": float(np.mean(depth_errs)),
        "n_views": int(n_views),
    }

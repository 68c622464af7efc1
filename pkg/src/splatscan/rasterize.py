"""Differentiable rendering of isotropic Gaussian splats.

Projection: a splat at world center mu with radius r maps to image center
K (R mu + t) / d, screen radius r2d = f * r / d (f = mean focal length), and
depth d = camera-frame z.  Compositing (front-to-back over depth-sorted
splats, per pixel p):

    f_i(p) = o_i * exp(-|p - mu2d_i|^2 / (2 r2d_i^2))     within 3*r2d support
    C(p)   = sum_i c_i f_i prod_{j<i} (1 - f_j)           likewise D with d_i,
                                                          S with 1

The backward pass (analytic, in ``_kernels``) differentiates exactly this
computation, including the finite support cutoff and early termination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .gaussians import GaussianMap
from .geometry import CameraPose, PinholeIntrinsics

DEFAULT_SUPPORT = 3.0
DEFAULT_EPS_T = 1e-4
DEFAULT_NEAR = 0.01
DEFAULT_TILE = 16


@dataclass
class RenderOutput:
    """Rendered maps plus per-pixel composited-splat counts (diagnostics)."""

    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    silhouette: np.ndarray  # (H, W), accumulated opacity in [0, 1)
    splat_count: np.ndarray  # (H, W) int32


def project_gaussian(
    center: np.ndarray,
    radius: float,
    pose: CameraPose,
    intrinsics: PinholeIntrinsics,
    near: float = DEFAULT_NEAR,
    support: float = DEFAULT_SUPPORT,
) -> tuple[np.ndarray, float, float] | None:
    """Project one splat; returns (mu2d, r2d, depth) or None when culled.

    Culled when depth <= near or the support disc (3 * r2d around mu2d) misses
    the pixel rectangle [0, W-1] x [0, H-1].
    """
    u, v, r2d, depth, idx = _project_batch(
        np.asarray(center, dtype=np.float64).reshape(1, 3),
        np.array([radius], dtype=np.float64),
        pose,
        intrinsics,
        near,
        support,
    )
    if idx.size == 0:
        return None
    return np.array([u[0], v[0]]), float(r2d[0]), float(depth[0])


def _project_batch(centers, radii, pose, intrinsics, near, support):
    """Visible splats only: image centers, screen radii, depths, source indices.

    Output is sorted by depth ascending (stable, so equal depths keep map
    order) — the order compositing consumes.
    """
    cam = centers @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    focal = 0.5 * (intrinsics.fx + intrinsics.fy)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
        r2d = focal * radii / z
        s = support * r2d
        vis = (
            (z > near)
            & (u + s >= 0.0)
            & (u - s <= intrinsics.width - 1.0)
            & (v + s >= 0.0)
            & (v - s <= intrinsics.height - 1.0)
        )
    idx = np.flatnonzero(vis)
    order = np.argsort(z[idx], kind="stable")
    idx = idx[order]
    return u[idx], v[idx], r2d[idx], z[idx], idx


def render(
    gmap: GaussianMap,
    pose: CameraPose,
    intrinsics: PinholeIntrinsics,
    eps_t: float = DEFAULT_EPS_T,
    support: float = DEFAULT_SUPPORT,
    near: float = DEFAULT_NEAR,
    tile: int = DEFAULT_TILE,
) -> RenderOutput:
    """Tiled forward render of the whole map at a pose."""
    h, w = intrinsics.height, intrinsics.width
    if len(gmap) == 0:
        return RenderOutput(
            color=np.zeros((h, w, 3)),
            depth=np.zeros((h, w)),
            silhouette=np.zeros((h, w)),
            splat_count=np.zeros((h, w), np.int32),
        )
    u, v, r2d, depth, idx = _project_batch(
        gmap.centers, gmap.radii, pose, intrinsics, near, support
    )
    offsets, lists = _kernels.bin_splats(u, v, r2d, w, h, tile, support)
    color, dep, sil, cnt = _kernels.composite_forward(
        u, v, r2d, depth, gmap.opacities[idx], np.ascontiguousarray(gmap.colors[idx]),
        h, w, tile, support, eps_t, offsets, lists,
    )
    return RenderOutput(color=color, depth=dep, silhouette=sil, splat_count=cnt)


def render_backward(
    gmap: GaussianMap,
    pose: CameraPose,
    intrinsics: PinholeIntrinsics,
    grad_color: np.ndarray,
    grad_depth: np.ndarray,
    eps_t: float = DEFAULT_EPS_T,
    support: float = DEFAULT_SUPPORT,
    near: float = DEFAULT_NEAR,
    tile: int = DEFAULT_TILE,
) -> dict[str, np.ndarray]:
    """Gradients of sum(grad_color * C) + sum(grad_depth * D) w.r.t. splat params.

    Returns full-length arrays keyed 'centers' (N,3), 'colors' (N,3),
    'radii' (N,), 'opacities' (N,); culled splats get zeros.
    """
    n = len(gmap)
    out = {
        "centers": np.zeros((n, 3)),
        "colors": np.zeros((n, 3)),
        "radii": np.zeros(n),
        "opacities": np.zeros(n),
    }
    if n == 0:
        return out
    h, w = intrinsics.height, intrinsics.width
    grad_color = np.ascontiguousarray(grad_color, dtype=np.float64)
    grad_depth = np.ascontiguousarray(grad_depth, dtype=np.float64)
    if grad_color.shape != (h, w, 3) or grad_depth.shape != (h, w):
        raise ValueError("gradient image shapes do not match intrinsics")

    u, v, r2d, depth, idx = _project_batch(
        gmap.centers, gmap.radii, pose, intrinsics, near, support
    )
    if idx.size == 0:
        return out
    offsets, lists = _kernels.bin_splats(u, v, r2d, w, h, tile, support)
    g_u, g_v, g_r2d, g_dep, g_opa, g_col = _kernels.composite_backward(
        u, v, r2d, depth, gmap.opacities[idx], np.ascontiguousarray(gmap.colors[idx]),
        h, w, tile, support, eps_t, offsets, lists, grad_color, grad_depth,
    )

    # chain through the projection: cam = R mu + t, u = fx X/Z + cx,
    # v = fy Y/Z + cy, r2d = f r/Z, depth = Z
    cam = gmap.centers[idx] @ pose.rotation.T + pose.translation
    x_c, y_c, z_c = cam[:, 0], cam[:, 1], cam[:, 2]
    fx, fy = intrinsics.fx, intrinsics.fy
    focal = 0.5 * (fx + fy)
    g_cam = np.empty_like(cam)
    g_cam[:, 0] = g_u * fx / z_c
    g_cam[:, 1] = g_v * fy / z_c
    g_cam[:, 2] = (
        -g_u * fx * x_c / z_c**2
        - g_v * fy * y_c / z_c**2
        - g_r2d * focal * gmap.radii[idx] / z_c**2
        + g_dep
    )
    out["centers"][idx] = g_cam @ pose.rotation
    out["radii"][idx] = g_r2d * focal / z_c
    out["opacities"][idx] = g_opa
    out["colors"][idx] = g_col
    return out


def count_missing(silhouette: np.ndarray, tau_miss: float = 0.05) -> int:
    """Pixels the map fails to cover: silhouette below tau_miss."""
    return int((silhouette < tau_miss).sum())

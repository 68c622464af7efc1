"""Map optimization: masked L1 loss, densification, Adam updates.

The loss for a frame compares the rendered color/depth against the observation
only where the map is already confident (silhouette S > tau_sil); coverage
holes are filled by densification, not by gradient descent.  With mask
M = [S > tau_sil] (treated as a constant during differentiation):

    L = sum_p M(p) [ 1[D_gt(p) > 0] |D(p) - D_gt(p)|
                     + w_c * sum_ch |C(p) - C_gt(p)| ]

summed, not averaged, over pixels.  Depth residuals skip pixels without a
depth return; color residuals use every masked pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussians import GaussianMap
from .geometry import RgbdFrame
from .rasterize import DEFAULT_EPS_T, RenderOutput, render, render_backward

_LOGIT_CLIP = 1e-4


@dataclass
class OptimConfig:
    """Optimizer and densification settings shared by exploration/refinement."""

    lr_centers: float = 1e-4
    lr_colors: float = 2.5e-3
    lr_opacities: float = 5e-3
    lr_radii: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    color_weight: float = 0.5
    tau_sil: float = 0.99
    tau_low: float = 0.5
    mde_lambda: float = 50.0
    densify_opacity: float = 0.7
    refine_densify_opacity: float = 0.5
    exploration_iters: int = 15
    refinement_iters: int = 60
    exploration_divisor: int = 4  # densification subsampling stride while exploring
    eps_t: float = DEFAULT_EPS_T


@dataclass
class LossValue:
    total: float
    depth_term: float
    color_term: float
    n_masked: int


def median_depth_error(rendered: np.ndarray, observed: np.ndarray) -> float:
    """Median |D - D_gt| over pixels where both depths are positive; 0 if none."""
    valid = (rendered > 0.0) & (observed > 0.0)
    if not valid.any():
        return 0.0
    return float(np.median(np.abs(rendered[valid] - observed[valid])))


def masked_loss(
    out: RenderOutput,
    frame: RgbdFrame,
    color_weight: float = 0.5,
    tau_sil: float = 0.99,
    mask: np.ndarray | None = None,
) -> tuple[LossValue, np.ndarray]:
    """Loss value plus the mask used (pass ``mask`` to reuse a frozen one)."""
    if mask is None:
        mask = out.silhouette > tau_sil
    depth_valid = mask & (frame.depth > 0.0)
    depth_term = float(np.abs(out.depth - frame.depth)[depth_valid].sum())
    color_term = float(np.abs(out.color - frame.color)[mask].sum())
    total = depth_term + color_weight * color_term
    return LossValue(total, depth_term, color_term, int(mask.sum())), mask


def loss_gradients(
    gmap: GaussianMap,
    out: RenderOutput,
    frame: RgbdFrame,
    mask: np.ndarray,
    color_weight: float = 0.5,
    eps_t: float = DEFAULT_EPS_T,
) -> dict[str, np.ndarray]:
    """Analytic dL/d(splat params) for the masked L1 loss, mask held fixed."""
    depth_valid = mask & (frame.depth > 0.0)
    g_depth = np.where(depth_valid, np.sign(out.depth - frame.depth), 0.0)
    g_color = np.where(mask[..., None], color_weight * np.sign(out.color - frame.color), 0.0)
    return render_backward(
        gmap, frame.pose, frame.intrinsics, g_color, g_depth, eps_t=eps_t
    )


def densify(
    gmap: GaussianMap,
    frame: RgbdFrame,
    divisor: int = 1,
    offset: tuple[int, int] = (0, 0),
    opacity_init: float = 0.7,
    tau_low: float = 0.5,
    mde_lambda: float = 50.0,
    eps_t: float = DEFAULT_EPS_T,
) -> int:
    """Insert splats where the map misses geometry the frame observed.

    A pixel densifies when the silhouette is weak (S < tau_low) or the map
    floats in front of the surface with an error far above the frame's median
    depth error (D_gt < D and |D - D_gt| > mde_lambda * MDE).  The test runs
    on a strided subsample of the frame (``divisor``, phase ``offset``), so
    each call probes a fraction of the pixels; cycling the phase over calls
    covers the whole grid.  Each selected pixel with a depth return
    back-projects to a new splat: center at the observed surface point, the
    pixel's color, radius d * mean(1/fx, 1/fy) at the full-resolution
    intrinsics (one sensor-pixel footprint), opacity ``opacity_init``.
    Returns the number of splats added.
    """
    sub = frame.subsample(divisor, offset)
    out = render(gmap, sub.pose, sub.intrinsics, eps_t=eps_t)
    mde = median_depth_error(out.depth, sub.depth)
    err = np.abs(out.depth - sub.depth)
    needs = (out.silhouette < tau_low) | ((sub.depth < out.depth) & (err > mde_lambda * mde))
    needs &= sub.depth > 0.0
    if not needs.any():
        return 0
    pts = sub.intrinsics.back_project(sub.depth, sub.pose).reshape(
        sub.intrinsics.height, sub.intrinsics.width, 3
    )[needs]
    depths = sub.depth[needs]
    pix = 0.5 * (1.0 / frame.intrinsics.fx + 1.0 / frame.intrinsics.fy)
    gmap.append(
        centers=pts,
        colors=sub.color[needs],
        radii=depths * pix,
        opacities=np.full(depths.shape[0], opacity_init),
    )
    return int(needs.sum())


class Adam:
    """Adam with bias correction, one (m, v) pair per named parameter group."""

    def __init__(self, params: dict[str, np.ndarray], lrs: dict[str, float],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if set(params) != set(lrs):
            raise ValueError("params and lrs must share keys")
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= self.lrs[k] * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def _logit(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, _LOGIT_CLIP, 1.0 - _LOGIT_CLIP)
    return np.log(x) - np.log1p(-x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def update_map(
    gmap: GaussianMap,
    frames: list[RgbdFrame],
    iterations: int,
    cfg: OptimConfig,
) -> list[tuple[int, int, float, float, float]]:
    """Optimize all splat parameters against ``frames``, round-robin.

    Parameters are reparameterized to keep constraints by construction
    (opacity/color via sigmoid, radius via exp); Adam state is fresh for each
    call.  Returns the loss trace, one row per iteration, recorded before that
    iteration's step: (iteration, frame_step_index, total, depth, color).
    Raises FloatingPointError if any parameter goes non-finite.
    """
    if iterations == 0 or len(gmap) == 0 or not frames:
        return []
    params = {
        "centers": gmap.centers.copy(),
        "colors": _logit(gmap.colors),
        "radii": np.log(gmap.radii),
        "opacities": _logit(gmap.opacities),
    }
    lrs = {
        "centers": cfg.lr_centers,
        "colors": cfg.lr_colors,
        "radii": cfg.lr_radii,
        "opacities": cfg.lr_opacities,
    }
    opt = Adam(params, lrs, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    trace = []
    for it in range(iterations):
        frame = frames[it % len(frames)]
        gmap.centers = params["centers"]
        gmap.colors = _sigmoid(params["colors"])
        gmap.radii = np.exp(params["radii"])
        gmap.opacities = _sigmoid(params["opacities"])
        out = render(gmap, frame.pose, frame.intrinsics, eps_t=cfg.eps_t)
        loss, mask = masked_loss(out, frame, cfg.color_weight, cfg.tau_sil)
        trace.append((it, frame.step_index, loss.total, loss.depth_term, loss.color_term))
        grads = loss_gradients(gmap, out, frame, mask, cfg.color_weight, cfg.eps_t)
        grads = {
            "centers": grads["centers"],
            "colors": grads["colors"] * gmap.colors * (1.0 - gmap.colors),
            "radii": grads["radii"] * gmap.radii,
            "opacities": grads["opacities"] * gmap.opacities * (1.0 - gmap.opacities),
        }
        opt.step(params, grads)
        for arr in params.values():
            if not np.isfinite(arr).all():
                raise FloatingPointError("map optimization produced non-finite parameters")
    gmap.centers = params["centers"]
    gmap.colors = _sigmoid(params["colors"])
    gmap.radii = np.exp(params["radii"])
    gmap.opacities = _sigmoid(params["opacities"])
    gmap.validate()
    return trace

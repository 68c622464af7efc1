"""Keyframe database: insertion policy and global/local training-set selection.

Every stride-th frame becomes a keyframe.  A keyframe is flagged *global* when
it matters beyond its neighborhood: it either reveals enough pixels the map
does not cover yet (completeness) or the map renders it poorly (quality).
Training batches mix a local half (the current view and its strongest
overlaps, for consistency) with a uniformly sampled global half (against
forgetting).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussians import GaussianMap
from .geometry import RgbdFrame
from .metrics import psnr
from .rasterize import render


@dataclass
class KeyframeRecord:
    frame: RgbdFrame
    is_global: bool
    reason: str  # "completeness" | "quality" | "local"
    new_pixel_fraction: float
    psnr_at_insert: float

    @property
    def step_index(self) -> int:
        return self.frame.step_index


@dataclass
class KeyframeDatabase:
    stride: int = 5
    new_pixel_threshold: float = 0.10
    psnr_threshold_db: float = 22.0
    sil_threshold: float = 0.5
    records: list[KeyframeRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def global_records(self) -> list[KeyframeRecord]:
        return [r for r in self.records if r.is_global]

    def maybe_insert(self, frame: RgbdFrame, gmap: GaussianMap,
                     eps_t: float = 1e-4) -> KeyframeRecord:
        """Insert the frame, classified from the pre-update render of the map.

        new_pixel_fraction is the share of pixels the map leaves uncovered
        (silhouette < 0.5); completeness outranks quality as the reason.
        """
        if frame.step_index % self.stride != 0:
            raise ValueError(
                f"keyframe step {frame.step_index} not a multiple of stride {self.stride}"
            )
        if self.records and frame.step_index <= self.records[-1].step_index:
            raise ValueError("keyframe step indices must be strictly increasing")
        out = render(gmap, frame.pose, frame.intrinsics, eps_t=eps_t)
        new_fraction = float((out.silhouette < self.sil_threshold).mean())
        quality = psnr(out.color, frame.color)
        if new_fraction > self.new_pixel_threshold:
            is_global, reason = True, "completeness"
        elif quality < self.psnr_threshold_db:
            is_global, reason = True, "quality"
        else:
            is_global, reason = False, "local"
        record = KeyframeRecord(
            frame=frame,
            is_global=is_global,
            reason=reason,
            new_pixel_fraction=new_fraction,
            psnr_at_insert=quality,
        )
        self.records.append(record)
        return record

    def _frustum_overlap(self, source: RgbdFrame, target: RgbdFrame,
                         near: float = 0.01) -> int:
        """Count of source's back-projected depth points inside target's frustum."""
        valid = source.depth > 0.0
        if not valid.any():
            return 0
        pts = source.intrinsics.back_project(source.depth, source.pose)[valid.reshape(-1)]
        cam = pts @ target.pose.rotation.T + target.pose.translation
        z = cam[:, 2]
        intr = target.intrinsics
        with np.errstate(divide="ignore", invalid="ignore"):
            u = intr.fx * cam[:, 0] / z + intr.cx
            v = intr.fy * cam[:, 1] / z + intr.cy
        inside = (z > near) & (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
        return int(inside.sum())

    def select_for_update(self, current: RgbdFrame, k: int,
                          rng: np.random.Generator,
                          use_global: bool = True) -> list[RgbdFrame]:
        """Training frames for one map update: k total including ``current``.

        Local half (k/2): current, the most recent earlier keyframe, then the
        highest-frustum-overlap earlier keyframes.  Global half (k/2): uniform
        sample without replacement from global records not already chosen;
        shortfalls backfill with the next-best local candidates.  With
        ``use_global`` off (ablation) the global half is skipped entirely and
        backfill fills every slot.
        """
        if k < 2:
            raise ValueError("k must be at least 2")
        earlier = [r for r in self.records if r.step_index < current.step_index]
        chosen: list[RgbdFrame] = [current]
        chosen_steps = {current.step_index}

        ranked: list[KeyframeRecord] = []
        if earlier:
            last = earlier[-1]
            chosen.append(last.frame)
            chosen_steps.add(last.step_index)
            rest = earlier[:-1]
            overlaps = [self._frustum_overlap(current, r.frame) for r in rest]
            order = sorted(range(len(rest)), key=lambda i: (-overlaps[i], -rest[i].step_index))
            ranked = [rest[i] for i in order]

        local_quota = k // 2
        while len(chosen) < local_quota and ranked:
            r = ranked.pop(0)
            if r.step_index not in chosen_steps:
                chosen.append(r.frame)
                chosen_steps.add(r.step_index)

        globals_available = self.global_records() if use_global else []
        pool = [r for r in globals_available if r.step_index not in chosen_steps]
        n_global = min(k - len(chosen), len(pool))
        if n_global > 0:
            picks = rng.choice(len(pool), size=n_global, replace=False)
            for i in sorted(int(p) for p in picks):
                chosen.append(pool[i].frame)
                chosen_steps.add(pool[i].step_index)

        while len(chosen) < k and ranked:
            r = ranked.pop(0)
            if r.step_index not in chosen_steps:
                chosen.append(r.frame)
                chosen_steps.add(r.step_index)
        return chosen

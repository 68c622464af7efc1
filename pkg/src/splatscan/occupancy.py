"""Occupancy voxel grid built by ray-casting depth frames.

States: unknown (0), free (1), occupied (2).  Integration walks every ray with
a DDA voxel traversal, collects free/occupied evidence for the whole frame,
then applies it in two phases so the result is independent of ray order:
occupied evidence wins over free evidence for the same voxel, and occupied
voxels are sticky across calls (a surface observation is never retracted).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .geometry import RgbdFrame

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

_STATE_NAMES = {UNKNOWN: "unknown", FREE: "free", OCCUPIED: "occupied"}


@dataclass
class OccupancyGrid:
    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]
    states: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.voxel_size <= 0.0:
            raise ValueError("voxel_size must be positive")
        self.dims = tuple(int(d) for d in self.dims)
        if any(d <= 0 for d in self.dims):
            raise ValueError("grid dims must be positive")
        if self.states is None:
            self.states = np.zeros(self.dims, dtype=np.uint8)
        elif self.states.shape != self.dims:
            raise ValueError("states shape does not match dims")

    @classmethod
    def from_bounds(cls, bounds_min: np.ndarray, bounds_max: np.ndarray,
                    voxel_size: float, margin: float = 0.0) -> "OccupancyGrid":
        bounds_min = np.asarray(bounds_min, dtype=np.float64) - margin
        bounds_max = np.asarray(bounds_max, dtype=np.float64) + margin
        dims = tuple(int(np.ceil((bounds_max[a] - bounds_min[a]) / voxel_size)) for a in range(3))
        return cls(origin=bounds_min, voxel_size=voxel_size, dims=dims)

    # ------------------------------------------------------------------ lookups

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.voxel_size * np.array(self.dims)

    def voxel_index(self, points: np.ndarray) -> np.ndarray:
        """Integer voxel coordinates, shape (n, 3); out-of-grid values clip."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        idx = np.floor((p - self.origin) / self.voxel_size).astype(np.int64)
        return np.clip(idx, 0, np.array(self.dims) - 1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((p >= self.origin) & (p < self.upper), axis=1)

    def voxel_center(self, indices: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(np.asarray(indices, dtype=np.float64))
        return self.origin + (idx + 0.5) * self.voxel_size

    def state_at(self, points: np.ndarray) -> np.ndarray:
        """State per point; points outside the grid report unknown."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        inside = self.contains(p)
        idx = self.voxel_index(p)
        out = np.zeros(p.shape[0], dtype=np.uint8)
        sel = np.flatnonzero(inside)
        out[sel] = self.states[idx[sel, 0], idx[sel, 1], idx[sel, 2]]
        return out

    def is_free(self, point: np.ndarray) -> bool:
        return bool(self.state_at(np.asarray(point).reshape(1, 3))[0] == FREE)

    def _sphere_voxel_block(self, center: np.ndarray, radius: float):
        """Indices and box distances of all voxels whose box touches the sphere."""
        center = np.asarray(center, dtype=np.float64).reshape(3)
        lo = np.floor((center - radius - self.origin) / self.voxel_size).astype(np.int64)
        hi = np.floor((center + radius - self.origin) / self.voxel_size).astype(np.int64)
        lo_c = np.maximum(lo, 0)
        hi_c = np.minimum(hi, np.array(self.dims) - 1)
        clipped = bool(np.any(lo < 0) or np.any(hi > np.array(self.dims) - 1))
        if np.any(lo_c > hi_c):
            return np.empty((0, 3), np.int64), np.empty(0), clipped
        axes = [np.arange(lo_c[a], hi_c[a] + 1) for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        idx = np.stack([gx.reshape(-1), gy.reshape(-1), gz.reshape(-1)], axis=1)
        vmin = self.origin + idx * self.voxel_size
        vmax = vmin + self.voxel_size
        delta = np.maximum(vmin - center, 0.0) + np.maximum(center - vmax, 0.0)
        return idx, np.linalg.norm(delta, axis=1), clipped

    def is_free_region(self, center: np.ndarray, radius: float) -> bool:
        """True iff every voxel touching the sphere is known free.

        Spheres poking outside the grid are not free (conservative).
        """
        idx, dist, clipped = self._sphere_voxel_block(center, radius)
        if clipped:
            return False
        near = idx[dist <= radius]
        if near.shape[0] == 0:
            return False
        return bool(np.all(self.states[near[:, 0], near[:, 1], near[:, 2]] == FREE))

    def occupied_within(self, center: np.ndarray, radius: float) -> bool:
        """True if any occupied voxel's box touches the sphere."""
        idx, dist, _ = self._sphere_voxel_block(center, radius)
        if idx.shape[0] == 0:
            return False
        near = idx[dist <= radius]
        if near.shape[0] == 0:
            return False
        return bool(np.any(self.states[near[:, 0], near[:, 1], near[:, 2]] == OCCUPIED))

    def free_voxel_indices(self) -> np.ndarray:
        return np.argwhere(self.states == FREE)

    def counts(self) -> dict[str, int]:
        vals, cnts = np.unique(self.states, return_counts=True)
        out = {name: 0 for name in _STATE_NAMES.values()}
        for v, c in zip(vals, cnts):
            out[_STATE_NAMES[int(v)]] = int(c)
        return out

    # -------------------------------------------------------------- integration

    def mark_free_sphere(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Force-mark a sphere of voxels free (spawn carve-out); returns indices."""
        idx, dist, _ = self._sphere_voxel_block(center, radius)
        near = idx[dist <= radius]
        if near.shape[0] == 0:
            return near
        cur = self.states[near[:, 0], near[:, 1], near[:, 2]]
        newly = near[cur == UNKNOWN]
        self.states[near[:, 0], near[:, 1], near[:, 2]] = FREE
        return newly

    def integrate(self, frame: RgbdFrame, max_range: float = 5.0) -> np.ndarray:
        """Carve the frame's rays into the grid; returns newly freed voxel indices.

        Rays run from the camera center to each pixel's surface point,
        truncated at ``max_range`` (Euclidean) and at the grid boundary; voxels
        crossed before the endpoint collect free evidence, the endpoint voxel
        collects occupied evidence when it is a real surface hit.  Zero-depth
        pixels integrate nothing.  The camera center must lie inside the grid.
        """
        origin = frame.pose.center
        if not self.contains(origin.reshape(1, 3))[0]:
            raise ValueError("camera center lies outside the occupancy grid")
        depth = frame.depth.reshape(-1)
        valid = depth > 0.0
        if not valid.any():
            return np.empty((0, 3), np.int64)
        dirs = frame.intrinsics.ray_directions().reshape(-1, 3)[valid] @ frame.pose.rotation
        endpoints = origin + dirs * depth[valid][:, None]
        hit = np.ones(endpoints.shape[0], dtype=np.bool_)

        # truncate at max sensing range (Euclidean)
        vec = endpoints - origin
        dist = np.linalg.norm(vec, axis=1)
        far = dist > max_range
        if far.any():
            endpoints[far] = origin + vec[far] * (max_range / dist[far])[:, None]
            hit[far] = False

        # clip to the grid box (camera is inside, so only the far end can leave)
        vec = endpoints - origin
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (self.origin - origin) / vec
            t_hi = (self.upper - origin) / vec
        # camera strictly inside: per axis one of (t_lo, t_hi) is the exit param
        t_exit = np.maximum(t_lo, t_hi).min(axis=1)
        outside = t_exit < 1.0
        if outside.any():
            scale = np.maximum(t_exit[outside] * (1.0 - 1e-9), 0.0)
            endpoints[outside] = origin + vec[outside] * scale[:, None]
            hit[outside] = False

        free_hits, occ_hits = _kernels.integrate_rays(
            origin, endpoints, hit, self.origin, self.voxel_size,
            np.array(self.dims, np.int64),
        )
        free_hits = free_hits.reshape(self.dims)
        occ_hits = occ_hits.reshape(self.dims)

        occ_mask = occ_hits > 0
        free_mask = (free_hits > 0) & ~occ_mask & (self.states != OCCUPIED)
        newly_freed = np.argwhere(free_mask & (self.states == UNKNOWN))
        self.states[occ_mask] = OCCUPIED
        self.states[free_mask] = FREE
        return newly_freed

    # ------------------------------------------------------------ serialization

    def save(self, bin_path: str | Path, json_path: str | Path) -> None:
        """Run-length encoded states (uint32 count, uint8 value) plus a JSON header."""
        flat = self.states.reshape(-1)
        change = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [flat.size]])
        runs = np.empty(starts.size * 5, dtype=np.uint8)
        lengths = (ends - starts).astype("<u4")
        runs_view = runs.reshape(starts.size, 5)
        runs_view[:, :4] = lengths.view(np.uint8).reshape(starts.size, 4)
        runs_view[:, 4] = flat[starts]
        Path(bin_path).write_bytes(runs.tobytes())
        header = {
            "origin": self.origin.tolist(),
            "voxel_size": self.voxel_size,
            "dims": list(self.dims),
            "encoding": "rle-u32-count-u8-state",
            "counts": self.counts(),
        }
        Path(json_path).write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, bin_path: str | Path, json_path: str | Path) -> "OccupancyGrid":
        header = json.loads(Path(json_path).read_text())
        raw = np.frombuffer(Path(bin_path).read_bytes(), dtype=np.uint8).reshape(-1, 5)
        lengths = raw[:, :4].copy().view("<u4").reshape(-1)
        values = raw[:, 4]
        flat = np.repeat(values, lengths)
        dims = tuple(header["dims"])
        if flat.size != int(np.prod(dims)):
            raise ValueError("grid payload does not match header dims")
        return cls(
            origin=np.array(header["origin"]),
            voxel_size=float(header["voxel_size"]),
            dims=dims,
            states=flat.reshape(dims).copy(),
        )

"""Next-best-view planning: candidate pools and rendering-based information gain.

Candidates live on a horizontal lattice (spacing ``lattice_step``) at fixed
height levels, each carrying one of ``n_directions`` viewing directions from a
golden-angle spiral over the sphere.  A candidate's utility is the number of
sensor pixels the current map fails to cover from that view (silhouette below
``tau_miss``); the selected goal maximizes

    gain_i = (1 - softmax(l)_i) * softmax(log N_i)_i

over the whole pool, where l_i is the Euclidean distance from the agent and
N_i the missing-pixel count — i.e. prefer large unseen area, discounted for
travel distance.  Exploration runs two stages: a sparse far-sighted coarse
pass, then a dense fine pass re-seeded over all free space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussians import GaussianMap
from .geometry import CameraPose, PinholeIntrinsics, look_at
from .occupancy import OccupancyGrid
from .rasterize import render


@dataclass
class StageConfig:
    """One exploration stage: lattice spacing, view count, candidate heights."""

    name: str
    lattice_step: float
    n_directions: int
    height_levels: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.lattice_step <= 0.0:
            raise ValueError("lattice_step must be positive")
        if self.n_directions < 1:
            raise ValueError("need at least one viewing direction")
        if not self.height_levels:
            raise ValueError("need at least one height level")


DEFAULT_COARSE = StageConfig("coarse", lattice_step=1.0, n_directions=5, height_levels=(1.2,))
DEFAULT_FINE = StageConfig("fine", lattice_step=0.5, n_directions=15,
                           height_levels=(0.8, 1.6))


def fibonacci_directions(n: int) -> np.ndarray:
    """n unit vectors from a golden-angle spiral over the full sphere, (n, 3)."""
    if n < 1:
        raise ValueError("n must be positive")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    theta = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=1)


@dataclass(frozen=True)
class Candidate:
    """A lattice viewpoint: key is the millimeter-quantized position + direction id."""

    key: tuple[int, int, int, int]
    position: tuple[float, float, float]
    direction_index: int

    def pose(self, directions: np.ndarray) -> CameraPose:
        pos = np.array(self.position)
        return look_at(pos, pos + directions[self.direction_index])


def candidate_key(position: np.ndarray, direction_index: int) -> tuple[int, int, int, int]:
    return (
        int(round(position[0] * 1000.0)),
        int(round(position[1] * 1000.0)),
        int(round(position[2] * 1000.0)),
        int(direction_index),
    )


def information_gain(distances: np.ndarray, n_missing: np.ndarray) -> np.ndarray:
    """Gain of every pool member; both softmaxes span the full pool.

    Missing-pixel counts are floored at 1 so log stays finite; a constant
    shift of distances or a positive rescale of counts leaves the argmax
    unchanged (softmax shift invariance / normalized-count invariance).
    """
    distances = np.asarray(distances, dtype=np.float64)
    n_missing = np.asarray(n_missing, dtype=np.float64)
    if distances.shape != n_missing.shape or distances.ndim != 1:
        raise ValueError("distances and n_missing must be 1-D and aligned")
    if distances.size == 0:
        return np.zeros(0)
    d = distances - distances.max()
    sm_d = np.exp(d)
    sm_d /= sm_d.sum()
    logn = np.log(np.maximum(n_missing, 1.0))
    logn -= logn.max()
    sm_n = np.exp(logn)
    sm_n /= sm_n.sum()
    return (1.0 - sm_d) * sm_n


@dataclass
class CandidatePool:
    """Current exploration stage's viewpoint candidates with cached utilities."""

    stage: StageConfig
    directions: np.ndarray = field(init=False)
    candidates: dict[tuple, Candidate] = field(default_factory=dict)
    n_missing: dict[tuple, int] = field(default_factory=dict)
    ever_admitted: int = 0

    def __post_init__(self) -> None:
        self.directions = fibonacci_directions(self.stage.n_directions)

    def __len__(self) -> int:
        return len(self.candidates)

    def sorted_keys(self) -> list[tuple]:
        return sorted(self.candidates.keys())

    def remove(self, key: tuple) -> None:
        self.candidates.pop(key, None)
        self.n_missing.pop(key, None)

    # ------------------------------------------------------------- admission

    def _admit_position(self, position: np.ndarray, grid: OccupancyGrid,
                        surface_buffer: float) -> int:
        """All directions at one clear lattice position; returns count added.

        A position qualifies only when every voxel within ``surface_buffer``
        of it is known free — this keeps candidates out of walls, away from
        surfaces, and (since the buffer exceeds the agent radius) reachable.
        """
        if not grid.is_free_region(position, surface_buffer):
            return 0
        added = 0
        for d in range(self.stage.n_directions):
            key = candidate_key(position, d)
            if key in self.candidates:
                continue
            self.candidates[key] = Candidate(
                key=key, position=tuple(float(x) for x in position), direction_index=d
            )
            added += 1
        self.ever_admitted += added
        return added

    def _lattice_positions_in_voxels(self, voxel_indices: np.ndarray,
                                     grid: OccupancyGrid) -> list[np.ndarray]:
        """Lattice points (stage spacing x height levels) inside given voxels."""
        if voxel_indices.shape[0] == 0:
            return []
        step = self.stage.lattice_step
        out = []
        vmin = grid.origin + voxel_indices * grid.voxel_size
        vmax = vmin + grid.voxel_size
        for z in self.stage.height_levels:
            zsel = (vmin[:, 2] <= z) & (z < vmax[:, 2])
            for lo, hi in zip(vmin[zsel], vmax[zsel]):
                # lattice coordinates are integer multiples of the step
                for gx in range(int(np.ceil(lo[0] / step)), int(np.floor(hi[0] / step)) + 1):
                    x = gx * step
                    if not (lo[0] <= x < hi[0]):
                        continue
                    for gy in range(int(np.ceil(lo[1] / step)), int(np.floor(hi[1] / step)) + 1):
                        y = gy * step
                        if lo[1] <= y < hi[1]:
                            out.append(np.array([x, y, z]))
        return out

    def admit_from_voxels(self, voxel_indices: np.ndarray, grid: OccupancyGrid,
                          surface_buffer: float) -> int:
        added = 0
        for pos in self._lattice_positions_in_voxels(voxel_indices, grid):
            added += self._admit_position(pos, grid, surface_buffer)
        return added

    # ------------------------------------------------------------- evaluation

    def evaluate(self, gmap: GaussianMap, intrinsics: PinholeIntrinsics,
                 tau_miss: float = 0.05, eps_t: float = 1e-4) -> None:
        """Refresh every candidate's missing-pixel count against the map."""
        for key in self.sorted_keys():
            cand = self.candidates[key]
            out = render(gmap, cand.pose(self.directions), intrinsics, eps_t=eps_t)
            self.n_missing[key] = int((out.silhouette < tau_miss).sum())

    def prune(self, intrinsics: PinholeIntrinsics, removal_fraction: float = 0.005) -> int:
        """Drop candidates whose view the map already covers; returns count removed."""
        threshold = removal_fraction * intrinsics.width * intrinsics.height
        doomed = [k for k in self.sorted_keys() if self.n_missing.get(k, 0) < threshold]
        for k in doomed:
            self.remove(k)
        return len(doomed)


def pool_update(
    pool: CandidatePool,
    newly_freed: np.ndarray,
    grid: OccupancyGrid,
    gmap: GaussianMap,
    intrinsics: PinholeIntrinsics,
    surface_buffer: float = 0.3,
    tau_miss: float = 0.05,
    removal_fraction: float = 0.005,
    eps_t: float = 1e-4,
) -> None:
    """Admit candidates in newly freed voxels, re-evaluate all, prune covered ones."""
    pool.admit_from_voxels(newly_freed, grid, surface_buffer)
    pool.evaluate(gmap, intrinsics, tau_miss, eps_t)
    pool.prune(intrinsics, removal_fraction)


def advance_stage(
    pool: CandidatePool,
    stage: StageConfig,
    grid: OccupancyGrid,
    gmap: GaussianMap,
    intrinsics: PinholeIntrinsics,
    surface_buffer: float = 0.3,
    tau_miss: float = 0.05,
    removal_fraction: float = 0.005,
    eps_t: float = 1e-4,
) -> CandidatePool:
    """Fresh pool for the next stage, seeded over ALL currently free voxels."""
    new_pool = CandidatePool(stage)
    new_pool.admit_from_voxels(grid.free_voxel_indices(), grid, surface_buffer)
    new_pool.evaluate(gmap, intrinsics, tau_miss, eps_t)
    new_pool.prune(intrinsics, removal_fraction)
    return new_pool


def goal_search(pool: CandidatePool, position: np.ndarray) -> tuple[Candidate, float] | None:
    """Highest-gain candidate from the agent's position; ties -> lowest key.

    Uses the missing-pixel counts cached by the latest evaluate/pool_update.
    Returns None when the pool is empty.
    """
    keys = pool.sorted_keys()
    if not keys:
        return None
    position = np.asarray(position, dtype=np.float64).reshape(3)
    pos = np.array([pool.candidates[k].position for k in keys])
    dist = np.linalg.norm(pos - position, axis=1)
    counts = np.array([pool.n_missing.get(k, 0) for k in keys], dtype=np.float64)
    gains = information_gain(dist, counts)
    best = int(np.argmax(gains))
    return pool.candidates[keys[best]], float(gains[best])

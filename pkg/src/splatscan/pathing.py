"""Path planning through known-free space: RRT with shortcut smoothing.

Edges are validated by sampling points every half voxel along the segment and
requiring a clear sphere at each sample.  The clearance radius is inflated by
a half voxel over the agent radius: any point on a validated edge is within a
quarter voxel of some sample, so both the agent sphere and a quarter-voxel
inflated sphere anywhere along the edge stay inside the union of validated
spheres.  Replaying a plan therefore never reports a collision the validation
missed, and any pose on the edge retains enough clearance to serve as the
start of the next plan.  The sample at an edge's own start is skipped — tree
nodes are validated when added, and the tree root is the agent's position,
which is only guaranteed the quarter-voxel margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .geometry import CameraPose
from .occupancy import OccupancyGrid


@dataclass
class PathPlan:
    """Executable pose sequence; the pipeline consumes one entry per step."""

    poses: list[CameraPose]
    goal_key: tuple | None = None
    index: int = 0

    def exhausted(self) -> bool:
        return self.index >= len(self.poses)

    def advance(self) -> CameraPose:
        if self.exhausted():
            raise IndexError("plan already exhausted")
        pose = self.poses[self.index]
        self.index += 1
        return pose


def _edge_clear(grid: OccupancyGrid, a: np.ndarray, b: np.ndarray, radius: float) -> bool:
    """Sphere-clear at samples spaced half a voxel along [a, b], skipping ``a``."""
    clearance = radius + grid.voxel_size / 2.0
    length = float(np.linalg.norm(b - a))
    n = max(int(np.ceil(length / (grid.voxel_size / 2.0))), 1)
    for i in range(1, n + 1):
        p = a + (b - a) * (i / n)
        if not grid.is_free_region(p, clearance):
            return False
    return True


def plan_path(
    grid: OccupancyGrid,
    start: np.ndarray,
    goal: np.ndarray,
    agent_radius: float,
    rng,
    max_iterations: int = 5000,
    step: float = 0.5,
    goal_bias: float = 0.1,
) -> list[np.ndarray] | None:
    """RRT through free voxels; returns smoothed waypoints [start..goal] or None.

    Tree extension is capped at ``step`` per iteration; with probability
    ``goal_bias`` the goal itself is the sample.  A node landing within
    ``step`` of the goal attempts the final connection.  ``rng`` may be a seed
    or a Generator; results are deterministic for a fixed seed.  Raises if the
    start has no clearance; an unreachable or unclear goal returns None.
    """
    rng = np.random.default_rng(rng)
    start = np.asarray(start, dtype=np.float64).reshape(3)
    goal = np.asarray(goal, dtype=np.float64).reshape(3)
    clearance = agent_radius + grid.voxel_size / 2.0
    if not grid.is_free_region(start, agent_radius + grid.voxel_size / 4.0):
        raise ValueError("path planning start position lacks clearance")
    if not grid.is_free_region(goal, clearance):
        return None
    if _edge_clear(grid, start, goal, agent_radius):
        return _shortcut(grid, [start, goal], agent_radius)

    free = grid.free_voxel_indices()
    if free.shape[0] == 0:
        return None
    lo = grid.origin + free.min(axis=0) * grid.voxel_size
    hi = grid.origin + (free.max(axis=0) + 1) * grid.voxel_size

    nodes = [start]
    parents = [-1]
    positions = np.empty((max_iterations + 1, 3))
    positions[0] = start
    n_nodes = 1
    for _ in range(max_iterations):
        if rng.random() < goal_bias:
            sample = goal
        else:
            sample = rng.uniform(lo, hi)
        near = int(np.argmin(np.linalg.norm(positions[:n_nodes] - sample, axis=1)))
        vec = sample - positions[near]
        dist = float(np.linalg.norm(vec))
        if dist < 1e-9:
            continue
        new = positions[near] + vec * min(1.0, step / dist)
        if not grid.is_free_region(new, clearance):
            continue
        if not _edge_clear(grid, positions[near], new, agent_radius):
            continue
        positions[n_nodes] = new
        nodes.append(new)
        parents.append(near)
        n_nodes += 1
        if np.linalg.norm(new - goal) <= step and _edge_clear(grid, new, goal, agent_radius):
            waypoints = [goal]
            i = n_nodes - 1
            while i >= 0:
                waypoints.append(positions[i].copy())
                i = parents[i]
            waypoints.reverse()
            return _shortcut(grid, waypoints, agent_radius)
    return None


def _shortcut(grid: OccupancyGrid, waypoints: list[np.ndarray],
              agent_radius: float) -> list[np.ndarray]:
    """Greedy smoothing: from each kept waypoint, jump to the farthest visible one."""
    if len(waypoints) <= 2:
        return waypoints
    out = [waypoints[0]]
    i = 0
    last = len(waypoints) - 1
    while i < last:
        j = last
        while j > i + 1 and not _edge_clear(grid, waypoints[i], waypoints[j], agent_radius):
            j -= 1
        out.append(waypoints[j])
        i = j
    return out


def plan_rotation(start: CameraPose, goal: CameraPose,
                  max_angular_step: float) -> list[np.ndarray]:
    """Constant-angular-velocity geodesic between two orientations.

    Returns the rotation matrices strictly after ``start`` up to and including
    ``goal`` (identical orientations yield just the endpoint), with every step
    at most ``max_angular_step`` radians.
    """
    if max_angular_step <= 0.0:
        raise ValueError("max_angular_step must be positive")
    rot_pair = Rotation.from_matrix(np.stack([start.rotation, goal.rotation]))
    angle = float((rot_pair[1] * rot_pair[0].inv()).magnitude())
    n = max(int(np.ceil(angle / max_angular_step - 1e-12)), 1)
    slerp = Slerp([0.0, 1.0], rot_pair)
    fractions = np.arange(1, n + 1) / n
    return [r.as_matrix() for r in slerp(fractions)]


def assemble_plan(
    waypoints: list[np.ndarray],
    start_pose: CameraPose,
    goal_pose: CameraPose,
    motion_step: float = 0.1,
    max_turn_deg: float = 10.0,
    goal_key: tuple | None = None,
) -> PathPlan:
    """Stepwise poses along the waypoint polyline, orientation slerped to the goal.

    Each polyline edge is subdivided so no step translates more than
    ``motion_step``; every waypoint itself is an entry, so consecutive entries
    always lie on a validated edge.  Steps are added (holding the final
    position) until the total turn is within ``max_turn_deg`` per step.  The
    final entry is exactly ``goal_pose``.
    """
    if motion_step <= 0.0:
        raise ValueError("motion_step must be positive")
    points: list[np.ndarray] = []
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        length = float(np.linalg.norm(b - a))
        n = max(int(np.ceil(length / motion_step)), 1)
        for i in range(1, n + 1):
            points.append(a + (b - a) * (i / n))
    rot_pair = Rotation.from_matrix(np.stack([start_pose.rotation, goal_pose.rotation]))
    angle = float((rot_pair[1] * rot_pair[0].inv()).magnitude())
    min_steps = int(np.ceil(angle / np.radians(max_turn_deg) - 1e-12))
    while len(points) < max(min_steps, 1):
        tail = points[-1] if points else np.asarray(waypoints[-1], dtype=np.float64)
        points.append(tail.copy())

    slerp = Slerp([0.0, 1.0], rot_pair)
    fractions = np.arange(1, len(points) + 1) / len(points)
    rotations = slerp(fractions)
    poses = []
    for p, rot in zip(points[:-1], rotations[:-1]):
        mat = rot.as_matrix()
        poses.append(CameraPose(rotation=mat, translation=-mat @ p))
    poses.append(goal_pose)
    return PathPlan(poses=poses, goal_key=goal_key)

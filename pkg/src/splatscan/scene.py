"""Synthetic indoor scenes: procedural generation, ray-cast RGB-D, GT sampling.

A scene is a union of axis-aligned colored boxes (walls, floor, ceiling,
furniture) forming a row of rooms connected by door openings.  The shell is
watertight: no interior ray escapes.  Rooms share one interior depth (y) and
height (z) per scene so the outer shell is a clean rectangle and every
exterior-facing surface lies on the scene bounds — interior/exterior
classification then needs no visibility casting.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import CameraPose, PinholeIntrinsics, RgbdFrame

# Face order used everywhere a box exposes per-face data: normals -x,+x,-y,+y,-z,+z.
FACE_NORMALS = np.array(
    [
        [-1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0],
    ]
)

_EPS_RAY = 1e-9


@dataclass
class Box:
    """Axis-aligned box with one RGB color per face (order: -x,+x,-y,+y,-z,+z)."""

    bounds_min: np.ndarray
    bounds_max: np.ndarray
    face_colors: np.ndarray

    def __post_init__(self) -> None:
        self.bounds_min = np.asarray(self.bounds_min, dtype=np.float64).reshape(3)
        self.bounds_max = np.asarray(self.bounds_max, dtype=np.float64).reshape(3)
        self.face_colors = np.asarray(self.face_colors, dtype=np.float64).reshape(6, 3)
        if not np.all(self.bounds_max > self.bounds_min):
            raise ValueError("box must have positive extent on every axis")
        if self.face_colors.min() < 0.0 or self.face_colors.max() > 1.0:
            raise ValueError("face colors must lie in [0, 1]")


@dataclass
class SceneSpec:
    """Generation parameters for a row of connected rooms."""

    n_rooms: int = 2
    room_span_range: tuple[float, float] = (3.0, 4.0)  # per-room x extent
    room_depth_range: tuple[float, float] = (3.0, 4.0)  # shared y extent
    room_height_range: tuple[float, float] = (2.5, 2.5)  # shared z extent
    wall_thickness: float = 0.1
    door_width: float = 0.9
    door_lintel: float = 0.4  # wall band left above each door opening
    furniture_per_room: tuple[int, int] = (1, 2)
    furniture_size_range: tuple[float, float] = (0.3, 0.8)
    agent_radius: float = 0.2

    def __post_init__(self) -> None:
        if self.n_rooms < 1:
            raise ValueError("need at least one room")
        for name in ("room_span_range", "room_depth_range", "room_height_range",
                     "furniture_size_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi")
        if self.wall_thickness <= 0.0:
            raise ValueError("wall_thickness must be positive")
        if self.agent_radius <= 0.0:
            raise ValueError("agent_radius must be positive")
        clearance = self.door_width + 2.0 * self.agent_radius
        if self.n_rooms > 1 and min(self.room_span_range[0], self.room_depth_range[0]) < clearance:
            raise ValueError(
                f"minimum room size {min(self.room_span_range[0], self.room_depth_range[0])} m "
                f"cannot contain a door plus agent diameter ({clearance} m)"
            )
        if self.room_height_range[0] - self.door_lintel < 1.0:
            raise ValueError("rooms too low for a usable door opening")


@dataclass
class SceneModel:
    """Generated scene: primitives plus room/door metadata and tight bounds."""

    primitives: list[Box]
    rooms: list[tuple[np.ndarray, np.ndarray]]  # interior AABBs (min, max)
    doors: list[np.ndarray]  # door opening centers
    seed: int
    spec: SceneSpec
    bounds_min: np.ndarray = field(init=False)
    bounds_max: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if not self.primitives:
            raise ValueError("scene has no primitives")
        self._mins = np.stack([b.bounds_min for b in self.primitives])
        self._maxs = np.stack([b.bounds_max for b in self.primitives])
        self._colors = np.stack([b.face_colors for b in self.primitives])
        self.bounds_min = self._mins.min(axis=0)
        self.bounds_max = self._maxs.max(axis=0)

    # ------------------------------------------------------------------ queries

    def points_inside(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask: point lies inside (or on the boundary of) any primitive."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        inside = np.all(
            (p[:, None, :] >= self._mins[None]) & (p[:, None, :] <= self._maxs[None]), axis=2
        )
        return inside.any(axis=1)

    def _segment_box_distances(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Minimum distance from segment ab to every primitive.

        Point-to-AABB distance is convex along the segment, so a ternary search
        per box converges to the global minimum.
        """
        a = np.asarray(a, dtype=np.float64).reshape(1, 3)
        d = np.asarray(b, dtype=np.float64).reshape(1, 3) - a

        def dist_at(t: np.ndarray) -> np.ndarray:
            p = a + t[:, None] * d  # (P, 3)
            delta = np.maximum(self._mins - p, 0.0) + np.maximum(p - self._maxs, 0.0)
            return np.linalg.norm(delta, axis=1)

        n = len(self.primitives)
        lo = np.zeros(n)
        hi = np.ones(n)
        for _ in range(72):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            shrink_hi = dist_at(m1) < dist_at(m2)
            hi = np.where(shrink_hi, m2, hi)
            lo = np.where(shrink_hi, lo, m1)
        return dist_at((lo + hi) / 2.0)

    def segment_collides(self, a: np.ndarray, b: np.ndarray, radius: float) -> bool:
        """True if the sphere of ``radius`` swept from a to b touches any primitive."""
        return bool(self._segment_box_distances(a, b).min() <= radius)

    # ---------------------------------------------------------------- rendering

    def render_rgbd(
        self,
        pose: CameraPose,
        intrinsics: PinholeIntrinsics,
        max_range: float | None = None,
        step_index: int = 0,
    ) -> RgbdFrame:
        """Ray-cast all pixels against all primitives (first-hit slab test).

        Depth stores the camera-frame z at the hit (0 where no hit or beyond
        ``max_range``); color is the hit face's color (black where no hit).
        Ties between coincident faces go to the lowest primitive index.
        """
        h, w = intrinsics.height, intrinsics.width
        origin = pose.center
        dirs = (intrinsics.ray_directions().reshape(-1, 3)) @ pose.rotation  # world frame
        n = dirs.shape[0]

        best_t = np.full(n, np.inf)
        best_box = np.full(n, -1, dtype=np.int64)
        best_axis = np.zeros(n, dtype=np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs  # +-inf where a component is 0
        for b in range(len(self.primitives)):
            lo_ax = np.empty((3, n))
            hi_ax = np.empty((3, n))
            for ax in range(3):
                t1 = (self._mins[b, ax] - origin[ax]) * inv[:, ax]
                t2 = (self._maxs[b, ax] - origin[ax]) * inv[:, ax]
                lo = np.minimum(t1, t2)
                hi = np.maximum(t1, t2)
                zero = dirs[:, ax] == 0.0
                if zero.any():
                    inside = (origin[ax] >= self._mins[b, ax]) & (origin[ax] <= self._maxs[b, ax])
                    lo[zero] = -np.inf if inside else np.inf
                    hi[zero] = np.inf if inside else -np.inf
                lo_ax[ax] = lo
                hi_ax[ax] = hi
            t_near = lo_ax.max(axis=0)
            t_far = hi_ax.min(axis=0)
            enter_axis = lo_ax.argmax(axis=0)
            hit = (t_near <= t_far) & (t_near > _EPS_RAY) & (t_near < best_t)
            best_t[hit] = t_near[hit]
            best_box[hit] = b
            best_axis[hit] = enter_axis[hit]

        depth = np.where(np.isfinite(best_t), best_t, 0.0)
        if max_range is not None:
            depth[depth > max_range] = 0.0
        valid = depth > 0.0
        color = np.zeros((n, 3))
        if valid.any():
            sel = np.flatnonzero(valid)
            face = 2 * best_axis[sel] + (dirs[sel, best_axis[sel]] < 0.0)
            color[sel] = self._colors[best_box[sel], face]
        return RgbdFrame(
            color=color.reshape(h, w, 3),
            depth=depth.reshape(h, w),
            pose=pose,
            intrinsics=intrinsics,
            step_index=step_index,
        )

    # ----------------------------------------------------------------- sampling

    def _face_table(self):
        """Flat per-face arrays: owning box, face index, area, for all P*6 faces."""
        p = len(self.primitives)
        ext = self._maxs - self._mins  # (P, 3)
        areas = np.empty((p, 6))
        areas[:, 0] = areas[:, 1] = ext[:, 1] * ext[:, 2]
        areas[:, 2] = areas[:, 3] = ext[:, 0] * ext[:, 2]
        areas[:, 4] = areas[:, 5] = ext[:, 0] * ext[:, 1]
        return areas.reshape(-1)

    def sample_gt_points(self, n: int, seed: int) -> np.ndarray:
        """Uniform samples over interior-facing surface area, shape (n, 3).

        Faces are drawn with probability proportional to full face area; a
        sample survives iff nudging it along the face normal lands strictly
        inside the scene bounds and outside every primitive.  Surviving samples
        are therefore uniform over the surface actually visible from interior
        air (wall-covered and furniture-covered strips are rejected).
        """
        if n <= 0:
            raise ValueError("n must be positive")
        rng = np.random.default_rng(seed)
        areas = self._face_table()
        weights = areas / areas.sum()
        nudge = 1e-6

        out = np.empty((n, 3))
        got = 0
        while got < n:
            batch = max(4 * (n - got), 1024)
            face_ids = rng.choice(weights.size, size=batch, p=weights)
            uv = rng.random((batch, 2))
            box_ids = face_ids // 6
            faces = face_ids % 6
            axes = faces // 2
            hi_side = faces % 2 == 1

            pts = np.empty((batch, 3))
            lo = self._mins[box_ids]
            hi = self._maxs[box_ids]
            for ax in range(3):
                on_axis = axes == ax
                t_axes = [a for a in range(3) if a != ax]
                rows = np.flatnonzero(on_axis)
                pts[rows, ax] = np.where(hi_side[rows], hi[rows, ax], lo[rows, ax])
                for k, ta in enumerate(t_axes):
                    pts[rows, ta] = lo[rows, ta] + uv[rows, k] * (hi[rows, ta] - lo[rows, ta])

            probes = pts + FACE_NORMALS[faces] * nudge
            in_bounds = np.all(
                (probes > self.bounds_min) & (probes < self.bounds_max), axis=1
            )
            keep = in_bounds & ~self.points_inside(probes)
            kept = pts[keep]
            take = min(n - got, kept.shape[0])
            out[got : got + take] = kept[:take]
            got += take
        return out

    # ------------------------------------------------------------ serialization

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "spec": asdict(self.spec),
            "rooms": [[r[0].tolist(), r[1].tolist()] for r in self.rooms],
            "doors": [d.tolist() for d in self.doors],
            "primitives": [
                {
                    "min": b.bounds_min.tolist(),
                    "max": b.bounds_max.tolist(),
                    "face_colors": b.face_colors.tolist(),
                }
                for b in self.primitives
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SceneModel":
        doc = json.loads(text)
        spec_doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc["spec"].items()}
        return cls(
            primitives=[
                Box(np.array(p["min"]), np.array(p["max"]), np.array(p["face_colors"]))
                for p in doc["primitives"]
            ],
            rooms=[(np.array(r[0]), np.array(r[1])) for r in doc["rooms"]],
            doors=[np.array(d) for d in doc["doors"]],
            seed=doc["seed"],
            spec=SceneSpec(**spec_doc),
        )


def _random_face_colors(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.05, 0.95, size=(6, 3))


def generate_scene(spec: SceneSpec, seed: int) -> SceneModel:
    """Deterministic scene from a spec and seed.

    Rooms are laid out left to right along +x, interiors starting at the
    origin: room 0 spans x in [0, sx0], y in [0, sy], z in [0, h].  Adjacent
    rooms share a dividing wall with a full-height-minus-lintel door opening.
    """
    rng = np.random.default_rng(seed)
    wt = spec.wall_thickness
    sy = float(rng.uniform(*spec.room_depth_range))
    h = float(rng.uniform(*spec.room_height_range))
    spans = [float(rng.uniform(*spec.room_span_range)) for _ in range(spec.n_rooms)]

    boxes: list[Box] = []
    rooms: list[tuple[np.ndarray, np.ndarray]] = []
    doors: list[np.ndarray] = []

    x = 0.0
    starts = []
    for sx in spans:
        starts.append(x)
        rooms.append((np.array([x, 0.0, 0.0]), np.array([x + sx, sy, h])))
        x += sx + wt
    x_max = starts[-1] + spans[-1]

    def add(lo, hi, colors=None):
        colors = _random_face_colors(rng) if colors is None else colors
        boxes.append(Box(np.array(lo, dtype=float), np.array(hi, dtype=float), colors))

    add([-wt, -wt, -wt], [x_max + wt, sy + wt, 0.0])  # floor
    add([-wt, -wt, h], [x_max + wt, sy + wt, h + wt])  # ceiling
    add([-wt, -wt, 0.0], [x_max + wt, 0.0, h])  # -y wall
    add([-wt, sy, 0.0], [x_max + wt, sy + wt, h])  # +y wall
    add([-wt, 0.0, 0.0], [0.0, sy, h])  # -x end wall
    add([x_max, 0.0, 0.0], [x_max + wt, sy, h])  # +x end wall

    door_h = h - spec.door_lintel
    for i in range(spec.n_rooms - 1):
        wx0 = starts[i] + spans[i]
        wx1 = wx0 + wt
        margin = 2.0 * spec.agent_radius
        dy = float(rng.uniform(margin, sy - spec.door_width - margin))
        doors.append(np.array([(wx0 + wx1) / 2.0, dy + spec.door_width / 2.0, door_h / 2.0]))
        if dy > 1e-9:
            add([wx0, 0.0, 0.0], [wx1, dy, h])
        if dy + spec.door_width < sy - 1e-9:
            add([wx0, dy + spec.door_width, 0.0], [wx1, sy, h])
        add([wx0, dy, door_h], [wx1, dy + spec.door_width, h])  # lintel

    # Furniture: solid boxes on the floor, kept clear of walls, doors, and
    # each other by at least the agent diameter so every room stays navigable.
    clearance = 2.0 * spec.agent_radius + 0.1
    for (room_lo, room_hi), _ in zip(rooms, spans):
        count = int(rng.integers(spec.furniture_per_room[0], spec.furniture_per_room[1] + 1))
        placed: list[tuple[np.ndarray, np.ndarray]] = []
        for _ in range(count):
            for _attempt in range(50):
                size = rng.uniform(spec.furniture_size_range[0], spec.furniture_size_range[1], 3)
                free_x = (room_hi[0] - room_lo[0]) - size[0] - 2 * clearance
                free_y = (room_hi[1] - room_lo[1]) - size[1] - 2 * clearance
                if free_x <= 0 or free_y <= 0:
                    break
                lo = np.array(
                    [
                        room_lo[0] + clearance + rng.uniform(0.0, free_x),
                        room_lo[1] + clearance + rng.uniform(0.0, free_y),
                        0.0,
                    ]
                )
                hi = lo + size
                near_door = any(
                    np.linalg.norm(np.maximum(lo[:2] - d[:2], 0) + np.maximum(d[:2] - hi[:2], 0))
                    < spec.door_width + clearance
                    for d in doors
                )
                overlap = any(
                    np.all(hi[:2] + clearance > plo[:2]) and np.all(lo[:2] - clearance < phi[:2])
                    for plo, phi in placed
                )
                if not near_door and not overlap:
                    placed.append((lo, hi))
                    add(lo, hi)
                    break
    return SceneModel(primitives=boxes, rooms=rooms, doors=doors, seed=seed, spec=spec)

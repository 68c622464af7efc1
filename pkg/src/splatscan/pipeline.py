"""End-to-end active reconstruction: explore, map, refine, evaluate, persist.

One run walks an agent through a synthetic scene it has never seen: every step
it takes an RGB-D observation; every keyframe step it grows and optimizes the
splat map, integrates the depth into the occupancy grid, and refreshes the
viewpoint candidate pool; whenever its current plan is exhausted it picks the
candidate with the best distance-weighted information gain and plans a
collision-free path there.  The coarse candidate stage hands over to a denser
fine stage when it drains; when the fine pool drains too, exploration is done
and the global keyframes drive a post-refinement pass that trades a little
geometric completeness for rendering quality.  Artifacts (models, grid,
trajectory, metrics) land in the run directory.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .config import RunConfig, dump_toml
from .gaussians import GaussianMap
from .geometry import CameraPose, PinholeIntrinsics, RgbdFrame, yaw_pose
from .images import save_color_png, save_depth_png
from .keyframes import KeyframeDatabase
from .occupancy import OccupancyGrid
from .optim import densify, update_map
from .pathing import PathPlan, assemble_plan, plan_path
from .planner import CandidatePool, advance_stage, goal_search, pool_update
from .metrics import evaluate_geometry, evaluate_rendering
from .scene import SceneModel, generate_scene

# rng stream domains, spawned off the run seed so streams never collide
_RNG_PLAN = 0
_RNG_KEYFRAME = 1
_RNG_EVAL = 2

_BOOTSTRAP_TURNS = 4  # in-place quarter turns allowed before giving up seeding


def derive_rng(seed: int, domain: int, t: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for one (domain, step) pair."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(domain, t)))


def _derive_int(seed: int, domain: int, t: int = 0) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(domain, t)).generate_state(1)[0])


@dataclass
class RunState:
    """Mutable state of one exploration run; advanced one agent step at a time."""

    scene: SceneModel
    gmap: GaussianMap
    grid: OccupancyGrid
    pool: CandidatePool
    kfdb: KeyframeDatabase
    pose: CameraPose
    sensor: PinholeIntrinsics
    planner_intr: PinholeIntrinsics
    t: int = 0
    stage: str = "coarse"  # coarse -> fine -> refine -> done
    plan: PathPlan | None = None
    plan_required: bool = True
    bootstrap_yaw: float = 0.0
    bootstrap_turns: int = 0
    ever_planned: bool = False
    coarse_exit_step: int | None = None
    coarse_exit_geom: dict | None = None
    stuck: bool = False
    trajectory: list[dict] = field(default_factory=list)
    loss_rows: list[tuple] = field(default_factory=list)
    pool_snapshots: list[dict] = field(default_factory=list)
    frames_by_step: dict[int, RgbdFrame] = field(default_factory=dict)

    @property
    def position(self) -> np.ndarray:
        return self.pose.center


def _pose_row(pose: CameraPose) -> dict:
    quat = Rotation.from_matrix(pose.rotation).as_quat()  # scalar-last (x, y, z, w)
    return {
        "position": [float(x) for x in pose.center],
        "quaternion": [float(q) for q in quat],
    }


def find_spawn(scene: SceneModel, height: float, carve_radius: float,
               voxel_size: float) -> np.ndarray:
    """Deterministic clear spawn point near the first room's center.

    The carved sphere must contain no scene surface even after voxelization
    (no voxel touching it may straddle a primitive), so the required scene
    clearance is the carve radius plus a voxel diagonal.
    """
    lo, hi = scene.rooms[0]
    center = (lo + hi) / 2.0
    clearance = carve_radius + voxel_size * np.sqrt(3.0) + 1e-6
    offsets = [0.0, 0.25, -0.25, 0.5, -0.5, 0.75, -0.75, 1.0, -1.0]
    heights = [height, (lo[2] + hi[2]) / 2.0]
    for z in heights:
        if not (lo[2] + carve_radius < z < hi[2] - carve_radius):
            continue
        for dx in offsets:
            for dy in offsets:
                p = np.array([center[0] + dx, center[1] + dy, z])
                if not np.all((p - clearance >= lo) & (p + clearance <= hi)):
                    continue
                if not scene.segment_collides(p, p, clearance):
                    return p
    raise RuntimeError("no clear spawn position found in the first room")


def init_state(rc: RunConfig) -> RunState:
    scene = generate_scene(rc.scene, rc.scene_seed)
    sensor = PinholeIntrinsics.from_fov(rc.sensor.width, rc.sensor.height,
                                        rc.sensor.hfov_deg)
    planner_intr = PinholeIntrinsics.from_fov(rc.planner.eval_width,
                                              rc.planner.eval_height,
                                              rc.sensor.hfov_deg)
    grid = OccupancyGrid.from_bounds(scene.bounds_min, scene.bounds_max,
                                     rc.voxel_size,
                                     margin=rc.margin_voxels * rc.voxel_size)
    carve_radius = rc.agent.radius + 3.0 * rc.voxel_size / 2.0
    spawn = find_spawn(scene, rc.coarse.height_levels[0], carve_radius, rc.voxel_size)
    grid.mark_free_sphere(spawn, carve_radius)
    return RunState(
        scene=scene,
        gmap=GaussianMap(),
        grid=grid,
        pool=CandidatePool(rc.coarse),
        kfdb=KeyframeDatabase(
            stride=rc.keyframes.stride,
            new_pixel_threshold=rc.keyframes.new_pixel_threshold,
            psnr_threshold_db=rc.keyframes.quality_threshold_db,
        ),
        pose=yaw_pose(spawn, 0.0),
        sensor=sensor,
        planner_intr=planner_intr,
    )


def _subsample_phases(divisor: int) -> list[tuple[int, int]]:
    """All (row, col) phase offsets of a strided grid, coarse-to-fine order.

    Cycling through these across keyframe steps lets the subsampled
    densification probe eventually visit every pixel of the full image.
    """
    order = list(range(0, divisor, 2)) + list(range(1, divisor, 2))
    return [(a, b) for a in order for b in order]


def _keyframe_ops(state: RunState, rc: RunConfig, frame: RgbdFrame) -> None:
    """Insert keyframe, densify, optimize, integrate, refresh candidate pool."""
    state.kfdb.maybe_insert(frame, state.gmap, eps_t=rc.optim.eps_t)
    state.frames_by_step[frame.step_index] = frame
    phases = _subsample_phases(rc.optim.exploration_divisor)
    phase = phases[(state.t // rc.keyframes.stride) % len(phases)]
    densify(
        state.gmap, frame,
        divisor=rc.optim.exploration_divisor,
        offset=phase,
        opacity_init=rc.optim.densify_opacity,
        tau_low=rc.optim.tau_low,
        mde_lambda=rc.optim.mde_lambda,
        eps_t=rc.optim.eps_t,
    )
    frames = state.kfdb.select_for_update(
        frame, rc.keyframes.k, derive_rng(rc.seed, _RNG_KEYFRAME, state.t),
        use_global=rc.keyframes.use_global,
    )
    trace = update_map(state.gmap, frames, rc.optim.exploration_iters, rc.optim)
    state.loss_rows.extend((state.t, "explore") + row for row in trace)
    newly_freed = state.grid.integrate(frame, max_range=rc.sensor.max_range)
    pool_update(
        state.pool, newly_freed, state.grid, state.gmap, state.planner_intr,
        surface_buffer=rc.planner.surface_buffer,
        tau_miss=rc.planner.tau_miss,
        removal_fraction=rc.planner.removal_fraction,
        eps_t=rc.optim.eps_t,
    )
    state.pool_snapshots.append(_pool_snapshot(state))


def _pool_snapshot(state: RunState) -> dict:
    cands = []
    for key in state.pool.sorted_keys():
        cand = state.pool.candidates[key]
        cands.append({
            "key": list(key),
            "position": list(cand.position),
            "direction_index": cand.direction_index,
            "n_missing": state.pool.n_missing.get(key, 0),
        })
    return {"step": state.t, "stage": state.pool.stage.name, "candidates": cands}


def _bootstrap_plan(state: RunState, rc: RunConfig) -> PathPlan:
    """Quarter turn in place: lets the first observations seed the pool."""
    state.bootstrap_turns += 1
    state.bootstrap_yaw += np.pi / 2.0
    goal_pose = yaw_pose(state.position, state.bootstrap_yaw)
    return assemble_plan(
        [state.position], state.pose, goal_pose,
        motion_step=rc.agent.max_step_length,
        max_turn_deg=rc.agent.max_angular_step_deg,
    )


def _try_plan(state: RunState, rc: RunConfig) -> None:
    """Goal search plus path planning; drives stage transitions on pool drain.

    Failed goals are dropped from the pool and the search repeats, a bounded
    number of times per step; the step simply retries later if all attempts
    fail.  An empty coarse pool advances to the fine stage (re-seeded over all
    free voxels) — unless no goal-directed plan has ever succeeded, in which
    case the agent first turns in place to look around.  Right after spawn the
    free region is a single view cone pinched at the camera, too narrow for a
    clearance-checked path, so the pool can fill with candidates that are all
    unreachable; the look-around widens free space into a full disk before the
    coarse stage is allowed to give up.
    """
    for _ in range(rc.planner.plan_retries):
        found = goal_search(state.pool, state.position)
        if found is None:
            if (state.stage == "coarse" and not state.ever_planned
                    and state.bootstrap_turns < _BOOTSTRAP_TURNS):
                state.plan = _bootstrap_plan(state, rc)
                state.plan_required = False
                return
            if state.stage == "coarse":
                state.coarse_exit_step = state.t
                state.coarse_exit_geom = evaluate_geometry(
                    state.gmap, state.scene, rc.evaluation.n_gt_points,
                    _derive_int(rc.seed, _RNG_EVAL), rc.evaluation.thresholds_cm,
                    rc.evaluation.min_opacity,
                )
                state.pool = advance_stage(
                    state.pool, rc.fine, state.grid, state.gmap, state.planner_intr,
                    surface_buffer=rc.planner.surface_buffer,
                    tau_miss=rc.planner.tau_miss,
                    removal_fraction=rc.planner.removal_fraction,
                    eps_t=rc.optim.eps_t,
                )
                state.stage = "fine"
                continue
            state.stage = "done"
            return
        candidate, _gain = found
        goal_pos = np.asarray(candidate.position)
        try:
            waypoints = plan_path(
                state.grid, state.position, goal_pos, rc.agent.radius,
                derive_rng(rc.seed, _RNG_PLAN, state.t),
                max_iterations=rc.planner.rrt_max_iterations,
                step=rc.planner.rrt_step,
                goal_bias=rc.planner.rrt_goal_bias,
            )
        except ValueError:
            # the agent's own position lost clearance in the evolving grid —
            # it cannot certify any further motion, so exploration ends here
            state.stuck = True
            state.stage = "done"
            return
        if waypoints is None:
            state.pool.remove(candidate.key)
            continue
        state.plan = assemble_plan(
            waypoints, state.pose, candidate.pose(state.pool.directions),
            motion_step=rc.agent.max_step_length,
            max_turn_deg=rc.agent.max_angular_step_deg,
            goal_key=candidate.key,
        )
        state.ever_planned = True
        state.plan_required = False
        return


def step(state: RunState, rc: RunConfig) -> RunState:
    """One agent step: observe, (keyframe ops), (re)plan, move."""
    if state.stage not in ("coarse", "fine"):
        raise ValueError(f"cannot step in stage {state.stage!r}")
    frame = state.scene.render_rgbd(state.pose, state.sensor,
                                    max_range=rc.sensor.max_range,
                                    step_index=state.t)
    is_keyframe = state.t % rc.keyframes.stride == 0
    if is_keyframe:
        _keyframe_ops(state, rc, frame)
    state.trajectory.append({
        "step": state.t,
        "stage": state.stage,
        **_pose_row(state.pose),
        "is_keyframe": is_keyframe,
    })
    if state.plan_required:
        _try_plan(state, rc)
        if state.stage == "done":
            state.t += 1
            return state
    if state.plan is not None and not state.plan.exhausted():
        state.pose = state.plan.advance()
    if state.plan is None or state.plan.exhausted():
        state.plan_required = True
    state.t += 1
    return state


def refine(state: RunState, rc: RunConfig) -> GaussianMap:
    """Post-refinement: densify + optimize over global keyframes, then prune.

    Runs ``rounds`` passes of full-resolution densification and long map
    updates over the global keyframes (all keyframes when the global
    mechanism is ablated), then drops splats with opacity below the prune
    threshold.  Zero rounds return the exploration map untouched.

    Refinement seeds new splats at the geometric point-cloud threshold
    (opacity 0.5 by default) rather than above it: they improve rendering
    immediately, but only the ones optimization promotes count as recovered
    geometry, so refinement trades completeness for photometric quality.
    """
    refined = state.gmap.copy()
    if rc.refinement.rounds == 0:
        return refined
    if rc.keyframes.use_global:
        records = state.kfdb.global_records()
    else:
        records = list(state.kfdb.records)
    frames = [r.frame for r in records]
    if not frames:
        return refined
    for round_index in range(rc.refinement.rounds):
        for frame in frames:
            densify(
                refined, frame,
                divisor=1,
                opacity_init=rc.optim.refine_densify_opacity,
                tau_low=rc.optim.tau_low,
                mde_lambda=rc.optim.mde_lambda,
                eps_t=rc.optim.eps_t,
            )
        trace = update_map(refined, frames, rc.optim.refinement_iters, rc.optim)
        state.loss_rows.extend((round_index, "refine") + row for row in trace)
    keep = refined.opacities >= rc.refinement.prune_opacity
    return GaussianMap(refined.centers[keep], refined.colors[keep],
                       refined.radii[keep], refined.opacities[keep])


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_loss_trace(path: Path, rows: list[tuple]) -> None:
    with open(path, "w") as fh:
        fh.write("step,phase,iteration,frame_step,total,depth,color\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _keyframe_rows(state: RunState) -> list[dict]:
    rows = []
    for record in state.kfdb.records:
        rows.append({
            "step": record.step_index,
            **_pose_row(record.frame.pose),
            "is_global": record.is_global,
            "reason": record.reason,
            "new_pixel_fraction": record.new_pixel_fraction,
            "psnr_at_insert": record.psnr_at_insert,
        })
    return rows


def _with_lpips_slot(render_report: dict) -> dict:
    return {**render_report, "lpips": None}


def run(rc: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Execute a full run and write all artifacts; returns the run summary.

    The summary's ``exit_code`` is 0 for a clean pool-drain termination and 2
    when the step budget ran out first (the run still completes and writes
    every artifact, with ``warning`` set).
    """
    started = time.monotonic()
    out = Path(out_dir if out_dir is not None else rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pool_history").mkdir(exist_ok=True)

    state = init_state(rc)
    while state.t < rc.step_budget and state.stage != "done":
        step(state, rc)
    drained = state.stage == "done"

    exploration = state.gmap.copy()
    state.stage = "refine"
    refined = refine(state, rc)
    state.stage = "done"

    # ----------------------------------------------------------- artifacts
    (out / "config.toml").write_text(dump_toml(rc))
    (out / "scene.json").write_text(state.scene.to_json())
    _write_jsonl(out / "trajectory.jsonl", state.trajectory)
    exploration.save_ply(out / "exploration_model.ply")
    refined.save_ply(out / "refined_model.ply")
    state.grid.save(out / "grid.bin", out / "grid.json")
    _write_json(out / "keyframes.json", _keyframe_rows(state))
    _write_loss_trace(out / "loss_trace.csv", state.loss_rows)
    for snapshot in state.pool_snapshots:
        _write_json(out / "pool_history" / f"pool_{snapshot['step']:06d}.json", snapshot)
    if rc.save_keyframe_renders:
        for step_index, frame in sorted(state.frames_by_step.items()):
            save_color_png(out / f"keyframe_{step_index:06d}_color.png", frame.color)
            save_depth_png(out / f"keyframe_{step_index:06d}_depth.png", frame.depth)

    # ------------------------------------------------------------- metrics
    eval_seed = _derive_int(rc.seed, _RNG_EVAL)
    geom = {
        "thresholds_cm": list(rc.evaluation.thresholds_cm),
        "exploration": evaluate_geometry(
            exploration, state.scene, rc.evaluation.n_gt_points, eval_seed,
            rc.evaluation.thresholds_cm, rc.evaluation.min_opacity),
        "refined": evaluate_geometry(
            refined, state.scene, rc.evaluation.n_gt_points, eval_seed,
            rc.evaluation.thresholds_cm, rc.evaluation.min_opacity),
    }
    if state.coarse_exit_geom is not None:
        geom["coarse_exit"] = state.coarse_exit_geom
        geom["coarse_exit_step"] = state.coarse_exit_step
    render = {
        "exploration": _with_lpips_slot(evaluate_rendering(
            exploration, state.scene, state.sensor, rc.evaluation.n_orbit_views,
            eps_t=rc.optim.eps_t)),
        "refined": _with_lpips_slot(evaluate_rendering(
            refined, state.scene, state.sensor, rc.evaluation.n_orbit_views,
            eps_t=rc.optim.eps_t)),
    }
    _write_json(out / "metrics_geom.json", geom)
    _write_json(out / "metrics_render.json", render)

    if drained and not state.stuck:
        terminated_by = "pool_drain"
    elif state.stuck:
        terminated_by = "stuck"
    else:
        terminated_by = "budget"
    clean = terminated_by == "pool_drain"
    summary = {
        "seed": rc.seed,
        "scene_seed": rc.scene_seed,
        "terminated_by": terminated_by,
        "warning": not clean,
        "exit_code": 0 if clean else 2,
        "n_steps": state.t,
        "coarse_exit_step": state.coarse_exit_step,
        "n_keyframes": len(state.kfdb),
        "n_global_keyframes": len(state.kfdb.global_records()),
        "n_splats_exploration": len(exploration),
        "n_splats_refined": len(refined),
        "grid_counts": state.grid.counts(),
        "runtime_s": time.monotonic() - started,
    }
    _write_json(out / "run_summary.json", summary)
    return summary


def evaluate_run_dir(run_dir: str | Path) -> dict:
    """Recompute both metric reports from a run directory's artifacts."""
    from .config import load_config  # local import to keep module deps one-way

    run_dir = Path(run_dir)
    rc = load_config(run_dir / "config.toml")
    scene = SceneModel.from_json((run_dir / "scene.json").read_text())
    sensor = PinholeIntrinsics.from_fov(rc.sensor.width, rc.sensor.height,
                                        rc.sensor.hfov_deg)
    exploration = GaussianMap.load_ply(run_dir / "exploration_model.ply")
    refined = GaussianMap.load_ply(run_dir / "refined_model.ply")
    eval_seed = _derive_int(rc.seed, _RNG_EVAL)
    geom = {
        "thresholds_cm": list(rc.evaluation.thresholds_cm),
        "exploration": evaluate_geometry(
            exploration, scene, rc.evaluation.n_gt_points, eval_seed,
            rc.evaluation.thresholds_cm, rc.evaluation.min_opacity),
        "refined": evaluate_geometry(
            refined, scene, rc.evaluation.n_gt_points, eval_seed,
            rc.evaluation.thresholds_cm, rc.evaluation.min_opacity),
    }
    render = {
        "exploration": _with_lpips_slot(evaluate_rendering(
            exploration, scene, sensor, rc.evaluation.n_orbit_views,
            eps_t=rc.optim.eps_t)),
        "refined": _with_lpips_slot(evaluate_rendering(
            refined, scene, sensor, rc.evaluation.n_orbit_views,
            eps_t=rc.optim.eps_t)),
    }
    _write_json(run_dir / "metrics_geom.json", geom)
    _write_json(run_dir / "metrics_render.json", render)
    return {"metrics_geom": geom, "metrics_render": render}

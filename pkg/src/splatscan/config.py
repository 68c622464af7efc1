"""Run configuration: TOML parsing, validation, and a canonical dump.

The config file mirrors the run's building blocks section by section; every
knob has a default, so an empty file is a valid (if tiny) run.  Unknown
sections or keys are hard errors — silent typos in experiment configs are
worse than crashes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .optim import OptimConfig
from .planner import DEFAULT_COARSE, DEFAULT_FINE, StageConfig
from .scene import SceneSpec


class ConfigError(Exception):
    """Invalid run configuration (unknown key, bad value, unreadable file)."""


@dataclass
class SensorConfig:
    width: int = 64
    height: int = 64
    hfov_deg: float = 90.0
    max_range: float = 5.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor resolution must be positive")
        if not (0.0 < self.hfov_deg < 180.0):
            raise ValueError("hfov_deg must lie in (0, 180)")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")


@dataclass
class AgentConfig:
    radius: float = 0.2
    max_step_length: float = 0.1
    max_angular_step_deg: float = 10.0

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError("agent radius must be positive")
        if self.max_step_length <= 0.0:
            raise ValueError("max_step_length must be positive")
        if self.max_angular_step_deg <= 0.0:
            raise ValueError("max_angular_step_deg must be positive")


@dataclass
class PlannerConfig:
    surface_buffer: float = 0.3
    tau_miss: float = 0.05
    removal_fraction: float = 0.005
    eval_width: int = 64
    eval_height: int = 64
    rrt_max_iterations: int = 5000
    rrt_step: float = 0.5
    rrt_goal_bias: float = 0.1
    plan_retries: int = 10

    def __post_init__(self) -> None:
        if self.surface_buffer <= 0.0:
            raise ValueError("surface_buffer must be positive")
        if not (0.0 < self.removal_fraction < 1.0):
            raise ValueError("removal_fraction must lie in (0, 1)")
        if self.eval_width < 1 or self.eval_height < 1:
            raise ValueError("planner evaluation resolution must be positive")
        if self.rrt_max_iterations < 1:
            raise ValueError("rrt_max_iterations must be positive")
        if self.rrt_step <= 0.0:
            raise ValueError("rrt_step must be positive")
        if not (0.0 <= self.rrt_goal_bias <= 1.0):
            raise ValueError("rrt_goal_bias must lie in [0, 1]")
        if self.plan_retries < 1:
            raise ValueError("plan_retries must be positive")


@dataclass
class KeyframeConfig:
    stride: int = 5
    k: int = 8
    quality_threshold_db: float = 22.0
    new_pixel_threshold: float = 0.10
    use_global: bool = True  # ablation switch: off = local-only training batches

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError("keyframe stride must be positive")
        if self.k < 2 or self.k % 2 != 0:
            raise ValueError("k must be an even integer >= 2")
        if not (0.0 <= self.new_pixel_threshold <= 1.0):
            raise ValueError("new_pixel_threshold must lie in [0, 1]")


@dataclass
class RefinementConfig:
    rounds: int = 2
    prune_opacity: float = 0.05

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ValueError("refinement rounds must be non-negative")
        if not (0.0 <= self.prune_opacity < 1.0):
            raise ValueError("prune_opacity must lie in [0, 1)")


@dataclass
class EvalConfig:
    n_gt_points: int = 100_000
    n_orbit_views: int = 36
    thresholds_cm: tuple[float, ...] = (5.0, 20.0)
    min_opacity: float = 0.5

    def __post_init__(self) -> None:
        if self.n_gt_points < 1:
            raise ValueError("n_gt_points must be positive")
        if self.n_orbit_views < 1:
            raise ValueError("n_orbit_views must be positive")
        if not self.thresholds_cm or any(t <= 0.0 for t in self.thresholds_cm):
            raise ValueError("thresholds_cm must be positive")
        if not (0.0 <= self.min_opacity < 1.0):
            raise ValueError("min_opacity must lie in [0, 1)")


@dataclass
class RunConfig:
    """Everything a run needs; section names match the TOML file."""

    seed: int = 1
    out_dir: str = "runs/latest"
    step_budget: int = 1500
    save_keyframe_renders: bool = False
    scene_seed: int = 1
    scene: SceneSpec = field(default_factory=SceneSpec)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    voxel_size: float = 0.10
    margin_voxels: int = 2
    agent: AgentConfig = field(default_factory=AgentConfig)
    coarse: StageConfig = field(default_factory=lambda: dataclasses.replace(DEFAULT_COARSE))
    fine: StageConfig = field(default_factory=lambda: dataclasses.replace(DEFAULT_FINE))
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    keyframes: KeyframeConfig = field(default_factory=KeyframeConfig)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        if self.step_budget < 1:
            raise ValueError("step_budget must be positive")
        if self.voxel_size <= 0.0:
            raise ValueError("voxel_size must be positive")
        if self.margin_voxels < 0:
            raise ValueError("margin_voxels must be non-negative")


_SECTIONS = {
    "run": None,  # handled explicitly
    "scene": SceneSpec,
    "sensor": SensorConfig,
    "grid": None,
    "agent": AgentConfig,
    "coarse": StageConfig,
    "fine": StageConfig,
    "planner": PlannerConfig,
    "optim": OptimConfig,
    "keyframes": KeyframeConfig,
    "refinement": RefinementConfig,
    "eval": EvalConfig,
}

_RUN_KEYS = {"seed", "out_dir", "step_budget", "save_keyframe_renders"}
_GRID_KEYS = {"voxel_size", "margin_voxels"}


def _tupled(value):
    return tuple(value) if isinstance(value, list) else value


def _build(cls, table: dict, section: str, skip: tuple[str, ...] = (), **extra):
    allowed = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    kwargs = {k: _tupled(v) for k, v in table.items()}
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}]: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from parsed TOML data, rejecting unknown keys."""
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for name, table in data.items():
        if not isinstance(table, dict):
            raise ConfigError(f"top-level key {name!r} must be a [{name}] section")

    run = dict(data.get("run", {}))
    unknown = set(run) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown key(s) in [run]: {', '.join(sorted(unknown))}")
    grid = dict(data.get("grid", {}))
    unknown = set(grid) - _GRID_KEYS
    if unknown:
        raise ConfigError(f"unknown key(s) in [grid]: {', '.join(sorted(unknown))}")

    scene_table = dict(data.get("scene", {}))
    scene_seed = scene_table.pop("seed", 1)
    if not isinstance(scene_seed, int):
        raise ConfigError("[scene] seed must be an integer")

    agent = _build(AgentConfig, data.get("agent", {}), "agent")
    scene = _build(SceneSpec, scene_table, "scene", skip=("agent_radius",),
                   agent_radius=agent.radius)
    sensor = _build(SensorConfig, data.get("sensor", {}), "sensor")

    def _stage_table(default: StageConfig, table: dict) -> dict:
        filled = {f.name: getattr(default, f.name)
                  for f in dataclasses.fields(StageConfig) if f.name != "name"}
        filled.update(table)
        return filled

    coarse = _build(StageConfig, _stage_table(DEFAULT_COARSE, data.get("coarse", {})),
                    "coarse", skip=("name",), name="coarse")
    fine = _build(StageConfig, _stage_table(DEFAULT_FINE, data.get("fine", {})),
                  "fine", skip=("name",), name="fine")
    planner = _build(PlannerConfig, data.get("planner", {}), "planner")
    optim = _build(OptimConfig, data.get("optim", {}), "optim")
    keyframes = _build(KeyframeConfig, data.get("keyframes", {}), "keyframes")
    refinement = _build(RefinementConfig, data.get("refinement", {}), "refinement")
    evaluation = _build(EvalConfig, data.get("eval", {}), "eval")

    try:
        return RunConfig(
            seed=run.get("seed", 1),
            out_dir=str(run.get("out_dir", "runs/latest")),
            step_budget=run.get("step_budget", 1500),
            save_keyframe_renders=bool(run.get("save_keyframe_renders", False)),
            scene_seed=scene_seed,
            scene=scene,
            sensor=sensor,
            voxel_size=grid.get("voxel_size", 0.10),
            margin_voxels=grid.get("margin_voxels", 2),
            agent=agent,
            coarse=coarse,
            fine=fine,
            planner=planner,
            optim=optim,
            keyframes=keyframes,
            refinement=refinement,
            evaluation=evaluation,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return config_from_dict(data)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def dump_toml(config: RunConfig) -> str:
    """Canonical TOML text for a RunConfig (every knob explicit)."""
    sections: list[tuple[str, dict]] = [
        ("run", {
            "seed": config.seed,
            "out_dir": config.out_dir,
            "step_budget": config.step_budget,
            "save_keyframe_renders": config.save_keyframe_renders,
        }),
        ("scene", {"seed": config.scene_seed,
                   **{f.name: getattr(config.scene, f.name)
                      for f in dataclasses.fields(SceneSpec) if f.name != "agent_radius"}}),
        ("sensor", dataclasses.asdict(config.sensor)),
        ("grid", {"voxel_size": config.voxel_size, "margin_voxels": config.margin_voxels}),
        ("agent", dataclasses.asdict(config.agent)),
        ("coarse", {f.name: getattr(config.coarse, f.name)
                    for f in dataclasses.fields(StageConfig) if f.name != "name"}),
        ("fine", {f.name: getattr(config.fine, f.name)
                  for f in dataclasses.fields(StageConfig) if f.name != "name"}),
        ("planner", dataclasses.asdict(config.planner)),
        ("optim", dataclasses.asdict(config.optim)),
        ("keyframes", dataclasses.asdict(config.keyframes)),
        ("refinement", dataclasses.asdict(config.refinement)),
        ("eval", dataclasses.asdict(config.evaluation)),
    ]
    lines = []
    for name, table in sections:
        lines.append(f"[{name}]")
        for key, value in table.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)

"""Command-line entry points: run a reconstruction, re-evaluate, render.

Exit codes: 0 on success, 2 when a run exhausted its step budget before the
candidate pool drained (artifacts are still written), 3 on configuration or
input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .config import ConfigError, load_config
from .gaussians import GaussianMap
from .geometry import CameraPose, PinholeIntrinsics, look_at
from .images import save_color_png, save_depth_png
from .pipeline import evaluate_run_dir, run
from .rasterize import render as render_map


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatscan",
        description="Active splat-map reconstruction of synthetic indoor scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a full exploration run")
    p_run.add_argument("--config", required=True, help="TOML run configuration")
    p_run.add_argument("--out-dir", default=None,
                       help="override the configured output directory")

    p_eval = sub.add_parser("eval", help="recompute metrics from run artifacts")
    p_eval.add_argument("--run-dir", required=True)

    p_render = sub.add_parser("render", help="render a stored model at a pose")
    p_render.add_argument("--run-dir", required=True)
    p_render.add_argument(
        "--pose", required=True,
        help="JSON (inline or a file path) with \"position\" plus either "
             "\"target\" or a scalar-last \"quaternion\"",
    )
    p_render.add_argument("--model", choices=("refined", "exploration"),
                          default="refined")
    p_render.add_argument("--out-prefix", default="render",
                          help="output PNGs: <prefix>_color.png / <prefix>_depth.png")
    return parser


def _parse_pose(text: str) -> CameraPose:
    path = Path(text)
    try:
        if path.is_file():
            text = path.read_text()
        data = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse pose JSON: {exc}") from exc
    if not isinstance(data, dict) or "position" not in data:
        raise ConfigError('pose JSON must be an object with a "position" key')
    position = np.asarray(data["position"], dtype=np.float64)
    if position.shape != (3,):
        raise ConfigError("pose position must be a 3-vector")
    if "target" in data:
        return look_at(position, np.asarray(data["target"], dtype=np.float64))
    if "quaternion" in data:
        quat = np.asarray(data["quaternion"], dtype=np.float64)
        if quat.shape != (4,):
            raise ConfigError("pose quaternion must be a 4-vector (x, y, z, w)")
        rotation = Rotation.from_quat(quat).as_matrix()
        return CameraPose(rotation=rotation, translation=-rotation @ position)
    raise ConfigError('pose JSON needs either a "target" or a "quaternion" key')


def _cmd_run(args) -> int:
    rc = load_config(args.config)
    summary = run(rc, args.out_dir)
    out_dir = args.out_dir if args.out_dir is not None else rc.out_dir
    print(f"run finished: {summary['terminated_by']} after {summary['n_steps']} steps")
    print(f"splats: {summary['n_splats_exploration']} explored, "
          f"{summary['n_splats_refined']} refined")
    print(f"artifacts in {out_dir}")
    if summary["warning"]:
        print("warning: exploration did not drain the candidate pool", file=sys.stderr)
    return summary["exit_code"]


def _cmd_eval(args) -> int:
    try:
        reports = evaluate_run_dir(args.run_dir)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot evaluate run directory {args.run_dir}: {exc}") from exc
    print(json.dumps(reports, indent=2, sort_keys=True))
    return 0


def _cmd_render(args) -> int:
    run_dir = Path(args.run_dir)
    pose = _parse_pose(args.pose)
    try:
        rc = load_config(run_dir / "config.toml")
        gmap = GaussianMap.load_ply(run_dir / f"{args.model}_model.ply")
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load run directory {args.run_dir}: {exc}") from exc
    intrinsics = PinholeIntrinsics.from_fov(rc.sensor.width, rc.sensor.height,
                                            rc.sensor.hfov_deg)
    out = render_map(gmap, pose, intrinsics, eps_t=rc.optim.eps_t)
    color_path = run_dir / f"{args.out_prefix}_color.png"
    depth_path = run_dir / f"{args.out_prefix}_depth.png"
    save_color_png(color_path, out.color)
    save_depth_png(depth_path, out.depth)
    print(color_path)
    print(depth_path)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "eval": _cmd_eval, "render": _cmd_render}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

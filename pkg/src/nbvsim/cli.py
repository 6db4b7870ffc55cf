"""Operator entry point: run benchmarks, serve the wire protocol, generate
procedural scenes, and replay recorded trajectories.

Everything is driven by JSON files (scene manifests, env config overrides,
trajectories) and emits CSV/JSON summaries; runs with fixed seeds are fully
deterministic, so re-running a spec reproduces its outputs byte for byte.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .env import (
    EnvConfig,
    ActionBox,
    load_scene_manifest,
    prepare_scene,
    read_trajectory,
    run_episode,
    write_trajectory,
)
from .geometry import CameraIntrinsics, Pose5D
from .houses import generate_scene_files
from .mapping import GridConfig
from .metrics import (
    aggregate,
    export_scanned_ply,
    report_from_episode,
    write_reports_csv,
    write_summary_csv,
    write_summary_json,
)
from .policies import FixedSequencePolicy, make_policy
from .server import serve


def build_env_config(overrides: dict | None = None,
                     grid_dims: tuple | None = None,
                     voxel_size: float | None = None) -> EnvConfig:
    """EnvConfig from a JSON override dict plus CLI grid flags.

    Recognized keys: action_box {lo, hi}, max_steps, coverage_done_threshold,
    keyframe_budget, collision_penalty, budget_penalty, collision_radius,
    intrinsics {width, height, vertical_fov, max_range}, grid {origin,
    voxel_size, dims, ...}, frame_stack_k.
    """
    overrides = dict(overrides or {})
    box = ActionBox(**overrides.pop("action_box", {}))
    intr = CameraIntrinsics(**overrides.pop("intrinsics", {}))
    grid_kwargs = dict(overrides.pop("grid", {}))
    if grid_dims is not None:
        grid_kwargs["dims"] = tuple(grid_dims)
    if voxel_size is not None:
        grid_kwargs["voxel_size"] = voxel_size
    if "origin" in grid_kwargs:
        grid_kwargs["origin"] = tuple(grid_kwargs["origin"])
    if "dims" in grid_kwargs:
        grid_kwargs["dims"] = tuple(grid_kwargs["dims"])
    grid = GridConfig(**grid_kwargs)
    return EnvConfig(action_box=box, intrinsics=intr, grid=grid, **overrides)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def cmd_run(args) -> int:
    manifest = Path(args.scenes)
    if not manifest.is_file():
        print(f"error: scene manifest not found: {manifest}", file=sys.stderr)
        return 2
    try:
        specs = load_scene_manifest(manifest)
    except (KeyError, json.JSONDecodeError) as exc:
        print(f"error: bad scene manifest {manifest}: {exc}", file=sys.stderr)
        return 2
    overrides = _load_config_file(args.config)
    config = build_env_config(overrides.get("env", overrides),
                              args.grid_dims, args.voxel_size)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj_dir = out / "trajectories"
    cloud_dir = out / "clouds"

    scenes = []
    for spec in specs:
        if not spec.mesh_path.is_file():
            print(f"error: mesh file not found: {spec.mesh_path}",
                  file=sys.stderr)
            return 2
        scenes.append(prepare_scene(spec, config.grid,
                                    n_samples=args.gt_samples, seed=0))

    reports = []
    for scene in scenes:
        for seed in seeds:
            policy = make_policy(args.policy, seed=seed)
            state, outcomes = run_episode(config, scene, policy,
                                          view_budget=args.views, seed=seed)
            report = report_from_episode(state, args.policy, budget=args.views)
            report.scene_id = f"{scene.scene_id}#{seed}"
            reports.append(report)
            if args.trajectories:
                traj_dir.mkdir(exist_ok=True)
                write_trajectory(
                    traj_dir / f"{scene.scene_id}_{seed}.jsonl", state, outcomes)
            if args.ply:
                cloud_dir.mkdir(exist_ok=True)
                export_scanned_ply(state, cloud_dir / f"{scene.scene_id}_{seed}.ply")

    write_reports_csv(reports, out / "results.csv")
    summaries = aggregate(reports)
    write_summary_csv(summaries, out / "summary.csv")
    write_summary_json(summaries, out / "summary.json")
    for s in summaries:
        print(f"{s.policy_id}: episodes={s.n_episodes} "
              f"mean_auc={s.mean_auc:.2f} mean_final_cr={s.mean_final_cr:.2f} "
              f"mean_chamfer_cm={s.mean_chamfer_cm:.3f}")
    return 0


def cmd_serve(args) -> int:
    overrides = _load_config_file(args.config)
    scenes_path = overrides.get("scenes", args.scenes)
    if scenes_path is None:
        print("error: serve needs --scenes or a config with a scenes path",
              file=sys.stderr)
        return 2
    manifest = Path(scenes_path)
    if not manifest.is_file():
        print(f"error: scene manifest not found: {manifest}", file=sys.stderr)
        return 2
    config = build_env_config(overrides.get("env", {}),
                              args.grid_dims, args.voxel_size)
    specs = load_scene_manifest(manifest)
    scenes = [prepare_scene(s, config.grid, n_samples=args.gt_samples, seed=0)
              for s in specs]
    if args.stdio:
        from .server import serve_stdio
        serve_stdio(config, scenes)
        return 0
    try:
        serve(config, scenes, bind=args.bind)
    except OSError as exc:
        print(f"error: cannot bind {args.bind!r}: {exc}", file=sys.stderr)
        return 2
    return 0


def cmd_gen_scenes(args) -> int:
    manifest = generate_scene_files(args.count, args.seed, args.out,
                                    target_extent=tuple(args.target_extent))
    print(f"wrote {args.count} house meshes and {manifest}")
    return 0


def cmd_replay(args) -> int:
    traj_path = Path(args.trajectory)
    if not traj_path.is_file():
        print(f"error: trajectory not found: {traj_path}", file=sys.stderr)
        return 2
    rows = read_trajectory(traj_path)
    poses = [Pose5D(*row["pose"]) for row in rows]
    manifest = Path(args.scenes)
    if not manifest.is_file():
        print(f"error: scene manifest not found: {manifest}", file=sys.stderr)
        return 2
    specs = {s.scene_id: s for s in load_scene_manifest(manifest)}
    if args.scene not in specs:
        print(f"error: scene {args.scene!r} not in manifest", file=sys.stderr)
        return 2
    overrides = _load_config_file(args.config)
    config = build_env_config(overrides.get("env", overrides),
                              args.grid_dims, args.voxel_size)
    scene = prepare_scene(specs[args.scene], config.grid,
                          n_samples=args.gt_samples, seed=0)
    policy = FixedSequencePolicy(poses[1:])
    state, outcomes = run_episode(config, scene, policy,
                                  view_budget=max(1, len(poses) - 1),
                                  start_pose=poses[0])
    report = report_from_episode(state, "replay", budget=len(poses) - 1)
    recorded = [row["cr"] for row in rows]
    matches = len(recorded) == len(state.coverage) and all(
        abs(a - b) < 1e-9 for a, b in zip(recorded, state.coverage))
    print(f"replayed {state.step_count} views: final_cr={report.final_cr:.4f} "
          f"auc={report.mean_auc:.4f} chamfer_cm={report.chamfer_cm:.4f}")
    print(f"coverage curve {'matches' if matches else 'DIFFERS from'} the recording")
    return 0 if matches else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nbvsim",
        description="Next-best-view scanning benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file with env config overrides")
        p.add_argument("--grid-dims", type=int, nargs=3, metavar=("NX", "NY", "NZ"))
        p.add_argument("--voxel-size", type=float)
        p.add_argument("--gt-samples", type=int, default=100_000,
                       help="surface samples per scene ground truth")

    p_run = sub.add_parser("run", help="evaluate a policy over a scene set")
    p_run.add_argument("--scenes", required=True, help="scene manifest JSON")
    p_run.add_argument("--policy", required=True,
                       help="random | random-hemisphere | uniform-hemisphere "
                            "| greedy-infogain | fixed:<poses.json>")
    p_run.add_argument("--views", type=int, default=30)
    p_run.add_argument("--seeds", default="0", help="comma-separated seeds")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--ply", action="store_true",
                       help="export scanned clouds as PLY")
    p_run.add_argument("--trajectories", action="store_true",
                       help="export per-episode trajectory JSONL")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_serve = sub.add_parser("serve", help="serve episodes over the wire protocol")
    p_serve.add_argument("--scenes", help="scene manifest JSON")
    p_serve.add_argument("--bind", default=None,
                         help=f"host:port (default ${'{'}NBV_BIND{'}'} or 127.0.0.1:7723)")
    p_serve.add_argument("--stdio", action="store_true",
                         help="serve a single session over stdin/stdout")
    add_common(p_serve)
    p_serve.set_defaults(func=cmd_serve)

    p_gen = sub.add_parser("gen-scenes", help="generate procedural house scenes")
    p_gen.add_argument("--count", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--target-extent", type=float, nargs=3,
                       default=[10.0, 10.0, 6.0], metavar=("X", "Y", "Z"))
    p_gen.set_defaults(func=cmd_gen_scenes)

    p_replay = sub.add_parser("replay",
                              help="re-run a recorded trajectory and recompute metrics")
    p_replay.add_argument("--trajectory", required=True)
    p_replay.add_argument("--scenes", required=True)
    p_replay.add_argument("--scene", required=True, help="scene id to replay on")
    add_common(p_replay)
    p_replay.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

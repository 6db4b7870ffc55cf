"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. The policy benchmark (10 procedural houses, 30 views,
seeds 0-4) runs twice through the CLI so the determinism criterion can
byte-compare complete artifact sets.

Benchmark configuration: houses normalized to (10, 10, 6) m, 0.25 m voxels
over the action box (80 x 80 x 40), 160 x 160 depth frames, 90-degree FOV,
radius-9 view hemisphere.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from nbvsim.cli import main
from nbvsim.env import (
    EnvConfig,
    Scene,
    build_ground_truth,
    check_collision,
    read_trajectory,
    run_episode,
)
from nbvsim.geometry import CameraIntrinsics, Pose5D, build_bvh, normalize_mesh
from nbvsim.houses import generate_house
from nbvsim.mapping import (
    GridConfig,
    OccupancyGrid,
    classify_values,
    integrate_depth,
    traverse_ray,
)
from nbvsim.metrics import chamfer, mean_auc, read_reports_csv
from nbvsim.mapping import PointCloud
from nbvsim.policies import FixedSequencePolicy, HemispherePolicy, HemisphereSpec
from nbvsim.render import render_depth
from nbvsim.server import ProtocolClient, ProtocolServer

from conftest import box_mesh
from oracles import (
    chamfer_bruteforce_cm,
    crossed_and_boundary_sets,
    fuse_frames_oracle,
    sample_segment_voxels,
)

BENCH_GRID = {"origin": [-10.0, -10.0, 0.0], "voxel_size": 0.25,
              "dims": [80, 80, 40]}
BENCH_CONFIG = {"env": {"intrinsics": {"width": 160, "height": 160},
                        "grid": BENCH_GRID}}
BENCH_POLICIES = [("random", "0,1,2,3,4"),
                  ("random-hemisphere", "0,1,2,3,4"),
                  ("uniform-hemisphere", "0,1,2,3,4"),
                  ("greedy-infogain", "0")]
N_SCENES = 10
VIEW_BUDGET = 30


def check(name: str, ok: bool, detail: str = ""):
    verdict = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {name}: {verdict}" + (f"  ({detail})" if detail else ""),
          flush=True)
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench_scenes")
    assert main(["gen-scenes", "--count", str(N_SCENES), "--seed", "0",
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def bench_config_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("bench_cfg") / "bench.json"
    p.write_text(json.dumps(BENCH_CONFIG))
    return p


def run_benchmark_pass(bench_dir, config_path, out_root: Path) -> float:
    """All four policy evaluations through the CLI; returns elapsed seconds."""
    t0 = time.time()
    for policy, seeds in BENCH_POLICIES:
        rc = main(["run", "--scenes", str(bench_dir / "scenes.json"),
                   "--policy", policy, "--views", str(VIEW_BUDGET),
                   "--seeds", seeds, "--config", str(config_path),
                   "--trajectories", "--out", str(out_root / policy)])
        assert rc == 0, f"benchmark run failed for {policy}"
    return time.time() - t0


@pytest.fixture(scope="module")
def bench_pass1(bench_dir, bench_config_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("bench_out1")
    elapsed = run_benchmark_pass(bench_dir, bench_config_path, out)
    return out, elapsed


@pytest.fixture(scope="module")
def bench_pass2(bench_dir, bench_config_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("bench_out2")
    run_benchmark_pass(bench_dir, bench_config_path, out)
    return out


@pytest.fixture(scope="module")
def aligned_cube_scene_small():
    grid = GridConfig(origin=(-6.0, -6.0, 0.0), voxel_size=1.0, dims=(12, 12, 12))
    mesh = box_mesh([-2.0, -2.0, 0.0], [2.0, 2.0, 4.0])
    gt = build_ground_truth(mesh, grid, n_samples=50_000, seed=0)
    return Scene("cube", mesh, build_bvh(mesh), gt), grid


class TestOccupancyMappingOracle:
    def test_fusion_matches_bruteforce_on_50_frames(self, aligned_cube_scene_small):
        scene, grid = aligned_cube_scene_small
        intr = CameraIntrinsics(width=12, height=12, vertical_fov=1.2,
                                max_range=20.0)
        rng = np.random.default_rng(2024)
        poses = []
        while len(poses) < 50:
            pos = rng.uniform([-5.5, -5.5, 0.2], [5.5, 5.5, 9.0])
            if max(abs(pos[0]), abs(pos[1])) < 2.6 and pos[2] < 4.6:
                continue
            poses.append(Pose5D(pos[0], pos[1], pos[2],
                                rng.uniform(-1.3, 0.4),
                                rng.uniform(-math.pi, math.pi)))
        # warm the kernels outside the clock
        warm = OccupancyGrid(grid)
        integrate_depth(warm, render_depth(scene.bvh, poses[0], intr))

        t0 = time.time()
        grid_state = OccupancyGrid(grid)
        frames = []
        for pose in poses:
            depth = render_depth(scene.bvh, pose, intr)
            frames.append(depth)
            integrate_depth(grid_state, depth)
        oracle_log, ambiguous = fuse_frames_oracle(grid, frames)
        elapsed = time.time() - t0

        got = classify_values(grid_state.log_odds, grid)
        want = classify_values(oracle_log, grid)
        mismatches = int(((got != want) & ~ambiguous).sum())
        check("occupancy-fusion-oracle",
              mismatches == 0 and elapsed < 30.0,
              f"mismatched voxels={mismatches}, runtime={elapsed:.1f}s "
              f"(50 frames, {intr.width}x{intr.height} rays, "
              f"{int(ambiguous.sum())} boundary voxels excluded)")


class TestTraversalOracle:
    def test_10k_segments_match_fine_step_oracle(self):
        grid = GridConfig(origin=(-4.5, -4.5, 0.0), voxel_size=0.75,
                          dims=(12, 12, 12))
        origin = grid.origin_arr
        h = grid.voxel_size
        dims = np.asarray(grid.dims)
        rng = np.random.default_rng(99)
        interior_misses = 0
        bad_extras = 0
        t0 = time.time()
        for _ in range(10_000):
            s = rng.uniform(-5.5, 5.5, size=3) + [0, 0, 4.5]
            e = s + rng.uniform(-6, 6, size=3)
            dda = {tuple(v) for v in traverse_ray(grid, s, e)}
            interior, _ = sample_segment_voxels(origin, h, dims, s, e)
            interior_misses += len(interior - dda)
            crossed, boundary = crossed_and_boundary_sets(origin, h, dims, s, e)
            if not (crossed <= dda and dda <= crossed | boundary):
                bad_extras += 1
        elapsed = time.time() - t0
        check("traversal-oracle",
              interior_misses == 0 and bad_extras == 0,
              f"interior misses={interior_misses}, unexplained diffs={bad_extras}, "
              f"runtime={elapsed:.1f}s")


class TestRewardIdentity:
    def test_100_step_telescoping(self, aligned_cube_scene_small):
        scene, grid = aligned_cube_scene_small
        config = EnvConfig(
            intrinsics=CameraIntrinsics(48, 48, math.pi / 2, 40.0),
            grid=grid, max_steps=100)
        rng = np.random.default_rng(5)
        poses = []
        while len(poses) < 100:
            p = rng.uniform([-10, -10, 0], [10, 10, 10])
            pose = Pose5D(p[0], p[1], p[2], rng.uniform(-1.5, 1.5),
                          rng.uniform(-math.pi, math.pi))
            if not check_collision(scene.bvh, pose, config.collision_radius):
                poses.append(pose)
        state, outcomes = run_episode(config, scene,
                                      FixedSequencePolicy(poses),
                                      view_budget=100)
        assert len(outcomes) == 100
        delta_sum = sum(
            o.reward + (config.budget_penalty
                        if o.info["budget_penalty_applied"] else 0.0)
            for o in outcomes)
        expected = (state.coverage[-1] - state.coverage[0]) / 100.0
        err = abs(delta_sum - expected)
        check("reward-identity", err <= 1e-12, f"|error|={err:.2e} over 100 steps")


def load_bench_curves(out_root: Path) -> dict[str, list[list[float]]]:
    curves: dict[str, list[list[float]]] = {}
    for policy, _ in BENCH_POLICIES:
        curves[policy] = []
        for traj in sorted((out_root / policy / "trajectories").glob("*.jsonl")):
            rows = read_trajectory(traj)
            curves[policy].append([r["cr"] for r in rows])
    return curves


class TestCoverageMonotonicity:
    def test_every_benchmark_episode_non_decreasing(self, bench_pass1):
        out, _ = bench_pass1
        curves = load_bench_curves(out)
        episodes = 0
        violations = 0
        worst = 0.0
        for policy, policy_curves in curves.items():
            for curve in policy_curves:
                episodes += 1
                diffs = np.diff(curve)
                if (diffs < 0).any():
                    violations += 1
                    worst = min(worst, float(diffs.min()))
        heuristics = sum(len(curves[p]) for p, _ in BENCH_POLICIES[:3])
        check("coverage-monotonicity",
              violations == 0 and heuristics == 3 * N_SCENES * 5,
              f"{episodes} episodes ({heuristics} in the 3x10x5 matrix), "
              f"violations={violations}, worst step={worst:.4f}")


class TestBaselineOrdering:
    def test_ordering_with_2pp_gaps(self, bench_pass1):
        out, elapsed = bench_pass1
        means = {}
        for policy, _ in BENCH_POLICIES:
            reports = read_reports_csv(out / policy / "results.csv")
            means[policy] = float(np.mean([r.final_cr for r in reports]))
        r, rh, uh, g = (means["random"], means["random-hemisphere"],
                        means["uniform-hemisphere"], means["greedy-infogain"])
        ok = (r + 2.0 <= rh) and (rh + 2.0 <= uh) and (g >= uh) \
            and elapsed < 600.0
        check("baseline-ordering", ok,
              f"random={r:.2f} < random-hemisphere={rh:.2f} < "
              f"uniform-hemisphere={uh:.2f} <= greedy={g:.2f}; "
              f"benchmark runtime={elapsed:.0f}s")


class TestMetricOracles:
    def test_chamfer_and_auc_oracles(self, bench_pass1):
        rng = np.random.default_rng(7)
        a = rng.uniform(-3, 3, size=(500, 3))
        b = rng.uniform(-3, 3, size=(500, 3))
        cham_err = abs(chamfer(PointCloud(a), PointCloud(b))
                       - chamfer_bruteforce_cm(a, b))
        const_ok = mean_auc([80.0] * 9) == 80.0
        two_ok = mean_auc([0.0, 100.0]) == 50.0
        out, _ = bench_pass1
        auc_le_final = True
        for curves in load_bench_curves(out).values():
            for curve in curves:
                if not (np.diff(curve) >= 0).all():
                    continue  # covered by the monotonicity criterion
                if mean_auc(curve) > curve[-1] + 1e-12:
                    auc_le_final = False
        check("metric-oracles",
              cham_err <= 1e-9 and const_ok and two_ok and auc_le_final,
              f"chamfer |err|={cham_err:.2e}, constant/two-point exact, "
              f"AUC <= final CR on every monotone benchmark curve")


class TestCPrimeAblation:
    def test_cprime_5_strictly_below_20_at_5_views(self):
        grid20 = GridConfig(origin=tuple(BENCH_GRID["origin"]),
                            voxel_size=BENCH_GRID["voxel_size"],
                            dims=tuple(BENCH_GRID["dims"]))
        grid5 = grid20.with_cprime(5.0)
        intr = CameraIntrinsics(160, 160, math.pi / 2, 40.0)
        aucs = {5.0: [], 20.0: []}
        for s in range(N_SCENES):
            mesh = normalize_mesh(generate_house(s), (10.0, 10.0, 6.0))
            bvh = build_bvh(mesh)
            gt = build_ground_truth(mesh, grid20, seed=0)
            for cprime, grid in ((5.0, grid5), (20.0, grid20)):
                scene = Scene(f"h{s}", mesh, bvh, gt)
                cfg = EnvConfig(intrinsics=intr, grid=grid)
                state, _ = run_episode(
                    cfg, scene,
                    HemispherePolicy(HemisphereSpec(radius=9.0), "uniform", 0),
                    view_budget=5, seed=0)
                aucs[cprime].append(mean_auc(state.coverage))
        lo, hi = float(np.mean(aucs[5.0])), float(np.mean(aucs[20.0]))
        check("cprime-ablation-direction", lo < hi,
              f"mean AUC at C'=5 is {lo:.3f} < {hi:.3f} at C'=20 "
              f"(uniform hemisphere, 5 views, {N_SCENES} scenes)")


class TestWireTransparency:
    def test_30_step_session_bit_exact(self, aligned_cube_scene_small):
        scene, grid = aligned_cube_scene_small
        config = EnvConfig(intrinsics=CameraIntrinsics(24, 24, math.pi / 2, 40.0),
                           grid=grid)
        rng = np.random.default_rng(17)
        actions = []
        while len(actions) < 30:
            p = rng.uniform([-9, -9, 0], [9, 9, 9])
            if max(abs(p[0]), abs(p[1])) < 3.0 and p[2] < 4.6:
                continue
            actions.append([float(p[0]), float(p[1]), float(p[2]),
                            float(rng.uniform(-1.2, 1.2)),
                            float(rng.uniform(-3.1, 3.1))])
        server = ProtocolServer(config, [scene], bind="127.0.0.1:0", quiet=True)
        import threading
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            client = ProtocolClient(host, port)
            reply = client.request({"type": "reset", "scene": "cube", "seed": 0})
            wire_curve = [reply["obs"]["coverage"]]
            wire_rewards = []
            for action in actions:
                reply = client.request({"type": "step", "action": action})
                wire_curve.append(reply["info"]["cr"])
                wire_rewards.append(reply["reward"])
                if reply["terminated"]:
                    break
            client.close()
        finally:
            server.shutdown()
            server.server_close()
        state, outcomes = run_episode(
            config, scene, FixedSequencePolicy([Pose5D(*a) for a in actions]),
            view_budget=30, seed=0)
        same_curve = wire_curve == state.coverage
        same_rewards = wire_rewards == [o.reward for o in outcomes]
        check("wire-transparency", same_curve and same_rewards,
              f"{len(wire_rewards)}-step session, curve and rewards bit-equal")


class TestDeterminism:
    def test_benchmark_reruns_byte_identical(self, bench_pass1, bench_pass2):
        out1, _ = bench_pass1
        out2 = bench_pass2
        identical = True
        compared = 0
        for policy, _ in BENCH_POLICIES:
            for name in ("summary.csv", "results.csv", "summary.json"):
                a = (out1 / policy / name).read_bytes()
                b = (out2 / policy / name).read_bytes()
                compared += 1
                if a != b:
                    identical = False
        check("determinism", identical,
              f"{compared} artifact files byte-compared across two full "
              f"benchmark passes")
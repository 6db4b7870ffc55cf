"""Walkthrough: scan episodes end to end — reset, policy-driven views,
coverage rewards, termination — and a small policy comparison.

Run from the repo root:  python3 demos/02_episode_and_policies.py
"""

import math

import numpy as np

from nbvsim.env import EnvConfig, Scene, build_ground_truth, run_episode
from nbvsim.geometry import CameraIntrinsics, build_bvh, normalize_mesh
from nbvsim.houses import generate_house
from nbvsim.mapping import GridConfig
from nbvsim.metrics import report_from_episode
from nbvsim.policies import (
    GreedyInfoGainPolicy,
    HemispherePolicy,
    HemisphereSpec,
    RandomPolicy,
)

grid = GridConfig(origin=(-10, -10, 0), voxel_size=0.5, dims=(40, 40, 20))
config = EnvConfig(
    intrinsics=CameraIntrinsics(width=128, height=128,
                                vertical_fov=math.pi / 2, max_range=40.0),
    grid=grid)

scenes = []
for seed in range(3):
    mesh = normalize_mesh(generate_house(seed), (10.0, 10.0, 6.0))
    scenes.append(Scene(f"house_{seed}", mesh, build_bvh(mesh),
                        build_ground_truth(mesh, grid, seed=0)))

policies = {
    "random": lambda seed: RandomPolicy(seed=seed),
    "random-hemisphere": lambda seed: HemispherePolicy(
        HemisphereSpec(radius=9.0), "random", seed=seed),
    "uniform-hemisphere": lambda seed: HemispherePolicy(
        HemisphereSpec(radius=9.0), "uniform", seed=seed),
    "greedy-infogain": lambda seed: GreedyInfoGainPolicy(seed=seed),
}

print(f"{'policy':20s} {'mean AUC':>9s} {'final CR':>9s} {'chamfer cm':>11s}")
for name, make in policies.items():
    aucs, finals, chams = [], [], []
    for scene in scenes:
        state, outcomes = run_episode(config, scene, make(0),
                                      view_budget=20, seed=0)
        report = report_from_episode(state, name, budget=20)
        aucs.append(report.mean_auc)
        finals.append(report.final_cr)
        chams.append(report.chamfer_cm)
    print(f"{name:20s} {np.mean(aucs):9.2f} {np.mean(finals):9.2f} "
          f"{np.mean(chams):11.2f}")

# one episode in detail: per-step reward = coverage gained / 100
scene = scenes[0]
state, outcomes = run_episode(config, scene, GreedyInfoGainPolicy(seed=0),
                              view_budget=8, seed=0)
print(f"\ngreedy scan of {scene.scene_id}: CR_0 = {state.coverage[0]:.2f}%")
for i, o in enumerate(outcomes, start=1):
    print(f"  view {i}: CR {o.info['cr_before']:6.2f} -> {o.info['cr_after']:6.2f}"
          f"   reward {o.reward:+.4f}")
print(f"cumulative reward {state.cumulative_reward:+.4f}, "
      f"status {state.status.value}")

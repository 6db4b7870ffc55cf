"""Walkthrough: load a procedural house, render depth and shaded frames from
a viewpoint, fuse them into the occupancy grid, and inspect coverage.

Run from the repo root:  python3 demos/01_render_and_fuse.py
Outputs land in demos/out/.
"""

import math
from pathlib import Path

import numpy as np

from nbvsim.env import build_ground_truth
from nbvsim.geometry import CameraIntrinsics, Pose5D, build_bvh, normalize_mesh
from nbvsim.houses import generate_house
from nbvsim.mapping import (
    GridConfig,
    OccupancyGrid,
    VoxelState,
    classify,
    coverage_ratio,
    integrate_depth,
    write_grid_dump,
    write_occupied_ply,
)
from nbvsim.render import render_depth, render_gray, write_depth_pgm, write_gray_pgm

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

# A building-scale scene: procedural house, rescaled and grounded at origin.
mesh = normalize_mesh(generate_house(seed=7), target_extent=(10.0, 10.0, 6.0))
bvh = build_bvh(mesh)
lo, hi = mesh.bounds()
print(f"house: {len(mesh.triangles)} triangles, extents {np.round(hi - lo, 2)}")

# The camera: 90-degree vertical FOV, 200x200 for a quick run.
intr = CameraIntrinsics(width=200, height=200, vertical_fov=math.pi / 2,
                        max_range=40.0)
pose = Pose5D(x=-8.0, y=-6.0, z=4.0, pitch=-0.25, yaw=math.atan2(6.0, 8.0))

depth = render_depth(bvh, pose, intr)
gray = render_gray(bvh, pose, intr)
finite = np.isfinite(depth.depths)
print(f"depth frame: {finite.mean():5.1%} pixels hit, "
      f"range {depth.depths[finite].min():.2f}..{depth.depths[finite].max():.2f} m")
write_depth_pgm(depth, out_dir / "depth.pgm")
write_gray_pgm(gray, out_dir / "gray.pgm")

# Fuse a handful of viewpoints into the probabilistic grid.
grid_cfg = GridConfig(origin=(-10, -10, 0), voxel_size=0.5, dims=(40, 40, 20))
grid = OccupancyGrid(grid_cfg)
gt = build_ground_truth(mesh, grid_cfg, n_samples=100_000, seed=0)
print(f"ground truth: {gt.n_voxels} surface voxels")

from nbvsim.geometry import normalize_yaw

for k, yaw_deg in enumerate((0, 90, 180, 270)):
    yaw = math.radians(yaw_deg)
    cam = Pose5D(-9.0 * math.cos(yaw), -9.0 * math.sin(yaw), 4.0, -0.3,
                 normalize_yaw(yaw))
    stats = integrate_depth(grid, render_depth(bvh, cam, intr))
    cr = coverage_ratio(grid, gt.voxel_ids)
    print(f"view {k}: {stats.rays_cast} rays, "
          f"{stats.endpoint_voxels} endpoint voxels, coverage {cr:5.2f}%")

states, counts = classify(grid)
print("voxel states:", {s.name.lower(): n for s, n in counts.items()})
write_occupied_ply(grid, out_dir / "occupied.ply")
write_grid_dump(grid, out_dir / "grid.bin")
print(f"wrote {out_dir}/depth.pgm, gray.pgm, occupied.ply, grid.bin")

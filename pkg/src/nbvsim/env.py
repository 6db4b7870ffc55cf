"""Episodic scan environment: apply viewpoint actions, render and fuse
observations, reward coverage gain, and enforce termination rules.

An episode runs against one scene (mesh + BVH + voxelized ground truth).
The reset observation is rendered and integrated, so CR_0 may exceed zero
and the coverage curve has one more entry than the number of actions taken.

Episode coverage counts ground-truth voxels that have EVER been classified
occupied during the episode: a captured surface voxel stays captured even if
later grazing rays push its instantaneous log-odds back under the threshold.
This is what keeps every coverage curve non-decreasing; the raw grid itself
is fused strictly per the mapping contract.
"""

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import (
    BvhAccel,
    CameraIntrinsics,
    Pose5D,
    TriangleMesh,
    build_bvh,
    load_mesh,
    look_at_pose,
    normalize_mesh,
    point_in_mesh,
    point_mesh_distance,
)
from .mapping import (
    GridConfig,
    OccupancyGrid,
    PointCloud,
    classify_values,
    backproject,
    integrate_depth,
)
from .policies import PolicyExhausted, PolicyObservation
from .render import FrameStack, render_depth, render_gray


@dataclass(frozen=True)
class ActionBox:
    """Axis-aligned region the camera may occupy."""

    lo: tuple[float, float, float] = (-10.0, -10.0, 0.0)
    hi: tuple[float, float, float] = (10.0, 10.0, 10.0)

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("action box must have positive volume")

    @property
    def lo_arr(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo_arr + self.hi_arr)

    @property
    def extent(self) -> np.ndarray:
        return self.hi_arr - self.lo_arr

    def contains(self, pose: Pose5D) -> bool:
        p = pose.position
        return bool(((p >= self.lo_arr) & (p <= self.hi_arr)).all())

    def clamp(self, pose: Pose5D) -> Pose5D:
        p = np.clip(pose.position, self.lo_arr, self.hi_arr)
        return Pose5D(float(p[0]), float(p[1]), float(p[2]), pose.pitch, pose.yaw)


class EpisodeStatus(Enum):
    RUNNING = "running"
    DONE_COVERAGE = "coverage"
    DONE_COLLISION = "collision"
    DONE_BUDGET = "budget"


@dataclass(frozen=True)
class EnvConfig:
    action_box: ActionBox = ActionBox()
    max_steps: int = 100
    coverage_done_threshold: float = 99.0
    keyframe_budget: int | None = None  # None: resolved to the view budget
    collision_penalty: float = -10.0  # reward on a collision step
    budget_penalty: float = 0.01  # subtracted per step past the budget
    collision_radius: float = 0.3
    intrinsics: CameraIntrinsics = CameraIntrinsics()
    grid: GridConfig = GridConfig()
    frame_stack_k: int = 4

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0.0 < self.coverage_done_threshold <= 100.0:
            raise ValueError("coverage_done_threshold must be in (0, 100]")

    def resolved_keyframe_budget(self, view_budget: int | None = None) -> int:
        if self.keyframe_budget is not None:
            return self.keyframe_budget
        return view_budget if view_budget is not None else self.max_steps


@dataclass
class GroundTruth:
    """Voxelized surface of one scene plus the raw surface samples."""

    voxel_ids: np.ndarray  # sorted linear ids (x-fastest)
    surface_points: np.ndarray  # (N, 3)
    mesh_id: str

    def __post_init__(self):
        if len(self.voxel_ids) == 0:
            raise ValueError("ground truth has no surface voxels")

    @property
    def n_voxels(self) -> int:
        return len(self.voxel_ids)


@dataclass
class Scene:
    scene_id: str
    mesh: TriangleMesh
    bvh: BvhAccel
    ground_truth: GroundTruth


def sample_surface_points(mesh: TriangleMesh, n_samples: int,
                          seed: int = 0) -> np.ndarray:
    """Area-weighted uniform surface samples, deterministic per seed."""
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero surface area")
    tri = rng.choice(len(areas), size=n_samples, p=areas / total)
    u = rng.random(n_samples)
    v = rng.random(n_samples)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tv = mesh.triangle_corners()[tri]
    return tv[:, 0] + u[:, None] * (tv[:, 1] - tv[:, 0]) \
        + v[:, None] * (tv[:, 2] - tv[:, 0])


def build_ground_truth(mesh: TriangleMesh, grid: GridConfig,
                       n_samples: int = 100_000, seed: int = 0,
                       mesh_id: str = "") -> GroundTruth:
    """Sample the surface and voxelize into the deduplicated GT index set."""
    lo, hi = mesh.bounds()
    for corner, name in ((lo, "min"), (hi, "max")):
        inside = ((corner >= grid.origin_arr) & (corner <= grid.max_corner)).all()
        if not inside:
            raise ValueError(
                f"mesh bbox {name} corner {tuple(corner)} lies outside the grid "
                f"[{tuple(grid.origin_arr)}, {tuple(grid.max_corner)}]")
    points = sample_surface_points(mesh, n_samples, seed)
    idx3 = grid.voxel_index(points)
    np.clip(idx3, 0, np.asarray(grid.dims) - 1, out=idx3)
    ids = np.unique(grid.linear_ids(idx3))
    return GroundTruth(ids, points, mesh_id)


def check_collision(accel: BvhAccel, pose: Pose5D, radius: float) -> bool:
    """True if the pose is within `radius` of the surface or inside the mesh."""
    p = pose.position
    if point_mesh_distance(accel.mesh, p) < radius:
        return True
    return point_in_mesh(accel.mesh, p)


@dataclass
class EpisodeState:
    config: EnvConfig
    scene: Scene
    grid: OccupancyGrid
    poses: list[Pose5D]
    frames: FrameStack
    coverage: list[float]
    covered: np.ndarray = None  # ever-occupied flags aligned with GT voxel ids
    cumulative_reward: float = 0.0
    status: EpisodeStatus = EpisodeStatus.RUNNING
    keyframe_budget: int = 0
    rng: np.random.Generator = None
    # scanned-cloud accumulator: one representative point per voxel cell
    cloud_keys: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    cloud_points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))

    @property
    def step_count(self) -> int:
        return len(self.poses) - 1

    @property
    def current_coverage(self) -> float:
        return self.coverage[-1]


@dataclass
class StepOutcome:
    reward: float
    terminated: bool
    reason: str | None
    info: dict


_CLOUD_SHIFT = 1 << 20


def _accumulate_cloud(state: EpisodeState, cloud: PointCloud) -> None:
    if len(cloud) == 0:
        return
    h = state.grid.config.voxel_size
    idx = np.floor((cloud.points - state.grid.config.origin_arr) / h).astype(np.int64)
    keys = ((idx[:, 0] + _CLOUD_SHIFT)
            + (idx[:, 1] + _CLOUD_SHIFT) * (2 * _CLOUD_SHIFT)
            + (idx[:, 2] + _CLOUD_SHIFT) * (2 * _CLOUD_SHIFT) ** 2)
    uniq, first = np.unique(keys, return_index=True)
    fresh = ~np.isin(uniq, state.cloud_keys, assume_unique=False)
    state.cloud_keys = np.concatenate([state.cloud_keys, uniq[fresh]])
    state.cloud_points = np.concatenate(
        [state.cloud_points, cloud.points[first[fresh]]])


def _observe(state: EpisodeState, pose: Pose5D) -> float:
    """Render at `pose`, fuse, and return the updated episode coverage."""
    cfg = state.config
    depth = render_depth(state.scene.bvh, pose, cfg.intrinsics)
    gray = render_gray(state.scene.bvh, pose, cfg.intrinsics)
    integrate_depth(state.grid, depth)
    _accumulate_cloud(state, backproject(depth))
    state.frames.push(gray)
    gt = state.scene.ground_truth.voxel_ids
    occupied_now = state.grid.flat()[gt] >= state.grid.config.occupied_threshold
    state.covered |= occupied_now
    return 100.0 * float(np.count_nonzero(state.covered)) / len(gt)


def default_start_pose(config: EnvConfig, scene: Scene) -> Pose5D:
    """Corner-of-box viewpoint looking at the scene bbox center."""
    box = config.action_box
    margin = 0.5
    corner = np.array([box.lo_arr[0] + margin, box.lo_arr[1] + margin,
                       box.hi_arr[2] - margin])
    lo, hi = scene.mesh.bounds()
    return look_at_pose(corner, 0.5 * (lo + hi))


def reset(config: EnvConfig, scene: Scene, start_pose: Pose5D | None = None,
          seed: int = 0, view_budget: int | None = None) -> EpisodeState:
    """Fresh episode: empty grid, the start observation rendered and fused."""
    pose = start_pose if start_pose is not None else default_start_pose(config, scene)
    if not config.action_box.contains(pose):
        raise ValueError(f"start pose {pose.as_tuple()} outside the action box")
    if check_collision(scene.bvh, pose, config.collision_radius):
        raise ValueError(f"start pose {pose.as_tuple()} collides with the scene")
    state = EpisodeState(
        config=config,
        scene=scene,
        grid=OccupancyGrid(config.grid),
        poses=[pose],
        frames=FrameStack(config.frame_stack_k),
        coverage=[],
        covered=np.zeros(scene.ground_truth.n_voxels, dtype=bool),
        keyframe_budget=config.resolved_keyframe_budget(view_budget),
        rng=np.random.default_rng(seed),
    )
    state.coverage.append(_observe(state, pose))
    return state


def step(state: EpisodeState, action: Pose5D) -> StepOutcome:
    """Advance one action; see the module docstring for reward semantics."""
    if state.status is not EpisodeStatus.RUNNING:
        raise RuntimeError(f"episode already finished ({state.status.value})")
    cfg = state.config
    clamped = not cfg.action_box.contains(action)
    pose = cfg.action_box.clamp(action) if clamped else action
    cr_before = state.current_coverage
    t_next = state.step_count + 1

    if check_collision(state.scene.bvh, pose, cfg.collision_radius):
        state.status = EpisodeStatus.DONE_COLLISION
        state.poses.append(pose)
        state.coverage.append(cr_before)  # nothing integrated
        reward = cfg.collision_penalty
        state.cumulative_reward += reward
        info = {"cr_before": cr_before, "cr_after": cr_before,
                "collision": True, "clamped": clamped,
                "budget_penalty_applied": False}
        return StepOutcome(reward, True, state.status.value, info)

    state.poses.append(pose)
    cr_after = _observe(state, pose)
    state.coverage.append(cr_after)
    over_budget = t_next > state.keyframe_budget
    reward = (cr_after - cr_before) / 100.0
    if over_budget:
        reward -= cfg.budget_penalty
    state.cumulative_reward += reward

    if cr_after >= cfg.coverage_done_threshold:
        state.status = EpisodeStatus.DONE_COVERAGE
    elif t_next >= cfg.max_steps:
        state.status = EpisodeStatus.DONE_BUDGET
    terminated = state.status is not EpisodeStatus.RUNNING
    info = {"cr_before": cr_before, "cr_after": cr_after, "collision": False,
            "clamped": clamped, "budget_penalty_applied": over_budget}
    return StepOutcome(reward, terminated,
                       state.status.value if terminated else None, info)


def observation(state: EpisodeState) -> PolicyObservation:
    """Read-only snapshot handed to policies."""
    cfg = state.config
    return PolicyObservation(
        pose_history=tuple(state.poses),
        grid_states=classify_values(state.grid.log_odds, state.grid.config),
        grid_config=state.grid.config,
        coverage=state.current_coverage,
        frames=state.frames,
        step=state.step_count,
        rng=state.rng,
        action_box_lo=cfg.action_box.lo,
        action_box_hi=cfg.action_box.hi,
        intrinsics=cfg.intrinsics,
        collides=lambda pose: check_collision(
            state.scene.bvh, pose, cfg.collision_radius),
    )


def run_episode(config: EnvConfig, scene: Scene, policy,
                view_budget: int, seed: int = 0,
                start_pose: Pose5D | None = None
                ) -> tuple[EpisodeState, list[StepOutcome]]:
    """Reset, then pull actions from the policy until termination or until
    `view_budget` views have been captured after the reset view."""
    if view_budget > config.max_steps:
        raise ValueError("view budget exceeds max_steps")
    if view_budget < 1:
        raise ValueError("view budget must be >= 1")
    state = reset(config, scene, start_pose=start_pose, seed=seed,
                  view_budget=view_budget)
    outcomes: list[StepOutcome] = []
    while state.status is EpisodeStatus.RUNNING and state.step_count < view_budget:
        try:
            action = policy.act(observation(state))
        except PolicyExhausted:
            break
        outcomes.append(step(state, action))
    return state, outcomes


# ---------------------------------------------------------------------------
# Scene manifests and trajectory files

@dataclass
class SceneSpec:
    scene_id: str
    mesh_path: Path
    target_extent: tuple[float, float, float] | None = (15.0, 15.0, 8.0)
    grid_overrides: dict = field(default_factory=dict)


def load_scene_manifest(path) -> list[SceneSpec]:
    """Manifest: {"scenes": [{"id", "mesh", "target_extent"?, "grid"?}]}.

    Mesh paths resolve relative to the manifest file. A null target_extent
    skips normalization (the mesh is used as-is).
    """
    path = Path(path)
    data = json.loads(path.read_text())
    specs = []
    for entry in data["scenes"]:
        extent = entry.get("target_extent", [15.0, 15.0, 8.0])
        specs.append(SceneSpec(
            scene_id=entry["id"],
            mesh_path=(path.parent / entry["mesh"]).resolve(),
            target_extent=tuple(extent) if extent is not None else None,
            grid_overrides=entry.get("grid", {}),
        ))
    return specs


def prepare_scene(spec: SceneSpec, grid: GridConfig,
                  n_samples: int = 100_000, seed: int = 0) -> Scene:
    mesh = load_mesh(spec.mesh_path)
    if spec.target_extent is not None:
        mesh = normalize_mesh(mesh, spec.target_extent)
    gt = build_ground_truth(mesh, grid, n_samples=n_samples, seed=seed,
                            mesh_id=spec.scene_id)
    return Scene(spec.scene_id, mesh, build_bvh(mesh), gt)


def write_trajectory(path, state: EpisodeState,
                     outcomes: list[StepOutcome]) -> None:
    """JSONL: one record per view; step 0 is the reset view (no reward)."""
    with open(path, "w") as fh:
        for i, pose in enumerate(state.poses):
            rec = {
                "step": i,
                "pose": list(pose.as_tuple()),
                "reward": outcomes[i - 1].reward if i > 0 else None,
                "cr": state.coverage[i],
            }
            fh.write(json.dumps(rec) + "\n")


def read_trajectory(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]

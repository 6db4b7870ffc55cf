"""View-planning policies: the act() interface, heuristic baselines, and a
grid-based greedy information-gain planner.

Policies hold private state (rng, sequence cursors); one instance drives one
episode. Everything is a pure function of (construction args, seed), so
repeated runs agree exactly.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import _kernels
from .geometry import CameraIntrinsics, Pose5D, look_at_pose, pose_to_frame
from .mapping import GridConfig, VoxelState


class PolicyExhausted(Exception):
    """Raised by fixed-sequence policies stepped past their last pose."""


@dataclass
class PolicyObservation:
    """Read-only episode snapshot a policy may act on."""

    pose_history: tuple[Pose5D, ...]
    grid_states: np.ndarray  # (nx, ny, nz) uint8 state codes
    grid_config: GridConfig
    coverage: float
    frames: object
    step: int
    rng: np.random.Generator
    action_box_lo: tuple[float, float, float]
    action_box_hi: tuple[float, float, float]
    intrinsics: CameraIntrinsics
    collides: Callable[[Pose5D], bool]


class Policy(Protocol):
    def act(self, obs: PolicyObservation) -> Pose5D: ...


_MAX_RESAMPLES = 100


def _sample_free_pose(rng: np.random.Generator, lo, hi,
                      collides: Callable[[Pose5D], bool]) -> Pose5D:
    """Uniform pose over the box and heading ranges, resampled on collision."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    for _ in range(_MAX_RESAMPLES):
        p = rng.uniform(lo, hi)
        pitch = rng.uniform(-math.pi / 2, math.pi / 2)
        yaw = rng.uniform(-math.pi, math.pi)
        pose = Pose5D(p[0], p[1], p[2], pitch, yaw)
        if not collides(pose):
            return pose
    raise RuntimeError(f"no collision-free pose after {_MAX_RESAMPLES} samples")


class RandomPolicy:
    """Uniform 5-dim viewpoints over the action box, collision-filtered."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def act(self, obs: PolicyObservation) -> Pose5D:
        return _sample_free_pose(self.rng, obs.action_box_lo,
                                 obs.action_box_hi, obs.collides)


@dataclass(frozen=True)
class HemisphereSpec:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 9.0
    n_heights: int = 5
    n_azimuths: int = 6

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("hemisphere radius must be positive")
        if self.n_heights < 1 or self.n_azimuths < 1:
            raise ValueError("hemisphere needs >= 1 height and azimuth")


def hemisphere_poses(spec: HemisphereSpec, mode: str = "uniform",
                     seed: int = 0, count: int | None = None) -> list[Pose5D]:
    """Viewpoints on the hemisphere, every heading aimed at its center.

    uniform: n_heights elevation rings (equal polar-angle increments in
    (0, pi/2], equator first) x n_azimuths equally spaced azimuths; ring i
    is phase-shifted by i/n_heights of the azimuth step so rings interleave.
    random: `count` positions with polar and azimuth angles drawn uniformly.
    """
    center = np.asarray(spec.center, dtype=float)
    if center[2] < 0.0:
        raise ValueError("hemisphere center below the ground plane")
    positions = []
    if mode == "uniform":
        step = 2 * math.pi / spec.n_azimuths
        for i in range(spec.n_heights):
            # equator (theta = pi/2) first, rising toward the pole; ring
            # phases interleave so adjacent (most useful) rings are offset
            # by half an azimuth step
            theta = (math.pi / 2) * (spec.n_heights - i) / spec.n_heights
            phase = step * ((i % 2) / 2.0 + (i // 2) / max(1, spec.n_heights))
            for j in range(spec.n_azimuths):
                phi = phase + step * j
                positions.append(center + spec.radius * np.array([
                    math.sin(theta) * math.cos(phi),
                    math.sin(theta) * math.sin(phi),
                    math.cos(theta)]))
    elif mode == "random":
        if count is None:
            count = spec.n_heights * spec.n_azimuths
        rng = np.random.default_rng(seed)
        theta = rng.uniform(0.0, math.pi / 2, count)
        phi = rng.uniform(0.0, 2 * math.pi, count)
        for th, ph in zip(theta, phi):
            positions.append(center + spec.radius * np.array(
                [math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph),
                 math.cos(th)]))
    else:
        raise ValueError(f"unknown hemisphere mode: {mode}")
    if any(p[2] < 0.0 for p in positions):
        raise ValueError("hemisphere pose below the ground plane")
    return [look_at_pose(p, center) for p in positions]


class HemispherePolicy:
    """Plays hemisphere viewpoints in order (uniform) or samples them
    (random); both always face the hemisphere center.

    Tall or wide scenes can reach into the hemisphere, so both modes are
    collision-guarded: uniform skips unsafe poses in the fixed sequence,
    random resamples them.
    """

    def __init__(self, spec: HemisphereSpec = HemisphereSpec(),
                 mode: str = "uniform", seed: int = 0):
        self.spec = spec
        self.mode = mode
        self.name = f"{mode}-hemisphere"
        self._seed = seed
        if mode == "uniform":
            self._sequence = hemisphere_poses(spec, "uniform")
            self._cursor = 0
        elif mode == "random":
            self.rng = np.random.default_rng(seed)
        else:
            raise ValueError(f"unknown hemisphere mode: {mode}")

    def act(self, obs: PolicyObservation) -> Pose5D:
        if self.mode == "uniform":
            while self._cursor < len(self._sequence):
                pose = self._sequence[self._cursor]
                self._cursor += 1
                if not obs.collides(pose):
                    return pose
            raise PolicyExhausted(
                f"uniform hemisphere exhausted after {len(self._sequence)} poses")
        center = np.asarray(self.spec.center, dtype=float)
        for _ in range(_MAX_RESAMPLES):
            theta = self.rng.uniform(0.0, math.pi / 2)
            phi = self.rng.uniform(0.0, 2 * math.pi)
            p = center + self.spec.radius * np.array(
                [math.sin(theta) * math.cos(phi),
                 math.sin(theta) * math.sin(phi), math.cos(theta)])
            pose = look_at_pose(p, center)
            if not obs.collides(pose):
                return pose
        raise RuntimeError(
            f"no collision-free hemisphere pose after {_MAX_RESAMPLES} samples")


class FixedSequencePolicy:
    """Replays an explicit pose list; raises PolicyExhausted past the end."""

    name = "fixed"

    def __init__(self, poses: list[Pose5D]):
        self.poses = list(poses)
        self._cursor = 0

    @classmethod
    def from_json(cls, path) -> "FixedSequencePolicy":
        """JSON file: [[x, y, z, pitch, yaw], ...]."""
        data = json.loads(open(path).read())
        return cls([Pose5D(*row) for row in data])

    def act(self, obs: PolicyObservation) -> Pose5D:
        if self._cursor >= len(self.poses):
            raise PolicyExhausted(f"sequence exhausted after {self._cursor} poses")
        pose = self.poses[self._cursor]
        self._cursor += 1
        return pose


class GreedyInfoGainPolicy:
    """Scores candidate viewpoints by the number of Unknown voxels visible in
    their frustum (occlusion-tested against Occupied voxels) and plays the
    argmax; ties go to the lowest candidate index."""

    name = "greedy-infogain"

    # above this many Unknown voxels, scores use an evenly strided subsample
    max_targets = 8000

    def __init__(self, n_candidates: int = 64, seed: int = 0,
                 hemisphere: HemisphereSpec | None = None):
        self.n_candidates = n_candidates
        self.rng = np.random.default_rng(seed)
        self.hemisphere = hemisphere if hemisphere is not None else HemisphereSpec()

    def _candidates(self, obs: PolicyObservation) -> list[Pose5D]:
        n_shell = self.n_candidates // 2
        shell_rings = max(1, int(math.sqrt(n_shell / 2)))
        shell_az = max(1, n_shell // shell_rings)
        shell = hemisphere_poses(
            HemisphereSpec(self.hemisphere.center, self.hemisphere.radius,
                           shell_rings, shell_az), "uniform")
        lo = np.asarray(obs.action_box_lo, dtype=float)
        hi = np.asarray(obs.action_box_hi, dtype=float)
        occ = np.argwhere(obs.grid_states == VoxelState.OCCUPIED)
        if len(occ):
            target = obs.grid_config.voxel_centers(occ).mean(axis=0)
        else:
            target = 0.5 * (obs.grid_config.origin_arr + obs.grid_config.max_corner)
        box: list[Pose5D] = []
        while len(shell) + len(box) < self.n_candidates:
            p = self.rng.uniform(lo, hi)
            if np.linalg.norm(p - target) < 1e-6:
                continue
            box.append(look_at_pose(p, target))
        cands = (shell + box)[: self.n_candidates]
        return [c for c in cands if not obs.collides(c)]

    def act(self, obs: PolicyObservation) -> Pose5D:
        candidates = self._candidates(obs)
        if not candidates:
            return _sample_free_pose(self.rng, obs.action_box_lo,
                                     obs.action_box_hi, obs.collides)
        unknown = np.argwhere(obs.grid_states == VoxelState.UNKNOWN)
        if len(unknown) == 0:
            return _sample_free_pose(self.rng, obs.action_box_lo,
                                     obs.action_box_hi, obs.collides)
        if len(unknown) > self.max_targets:
            pick = np.linspace(0, len(unknown) - 1, self.max_targets).astype(int)
            unknown = unknown[pick]
        targets = np.ascontiguousarray(obs.grid_config.voxel_centers(unknown))
        m = len(candidates)
        pos = np.empty((m, 3))
        fwd = np.empty((m, 3))
        left = np.empty((m, 3))
        up = np.empty((m, 3))
        for i, cand in enumerate(candidates):
            rot, trans = pose_to_frame(cand)
            pos[i] = trans
            fwd[i] = rot[:, 0]
            left[i] = rot[:, 1]
            up[i] = rot[:, 2]
        scores = np.zeros(m, dtype=np.int64)
        cfg = obs.grid_config
        ox, oy, oz = cfg.origin
        _kernels.infogain_scores(
            obs.grid_states, ox, oy, oz, cfg.voxel_size,
            pos, fwd, left, up,
            obs.intrinsics.tan_half_h, obs.intrinsics.tan_half_v,
            obs.intrinsics.max_range, targets,
            np.uint8(VoxelState.OCCUPIED), scores)
        if scores.max() <= 0:
            return _sample_free_pose(self.rng, obs.action_box_lo,
                                     obs.action_box_hi, obs.collides)
        return candidates[int(np.argmax(scores))]  # argmax: lowest tied index


def make_policy(name: str, seed: int = 0, **kwargs) -> Policy:
    """Policy factory used by the CLI; `fixed:<path>` loads a pose file."""
    if name == "random":
        return RandomPolicy(seed=seed)
    if name == "random-hemisphere":
        return HemispherePolicy(HemisphereSpec(**kwargs), "random", seed=seed)
    if name == "uniform-hemisphere":
        return HemispherePolicy(HemisphereSpec(**kwargs), "uniform", seed=seed)
    if name == "greedy-infogain":
        return GreedyInfoGainPolicy(seed=seed, **kwargs)
    if name.startswith("fixed:"):
        return FixedSequencePolicy.from_json(name.split(":", 1)[1])
    raise ValueError(f"unknown policy: {name}")

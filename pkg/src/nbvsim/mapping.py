"""Probabilistic occupancy grid: back-projection, exact voxel traversal,
log-odds fusion, three-state classification, and coverage.

Voxel (ix, iy, iz) spans origin + [i, i+1) * voxel_size per axis. Linear
voxel ids are x-fastest: id = ix + nx * (iy + ny * iz). Per depth frame,
every crossed voxel receives the miss increment c2 except the hit ray's
endpoint voxel, which receives c1 only; values are clamped once per frame.
"""

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import _kernels
from .geometry import Pose5D
from .render import DepthMap, camera_rays

DEFAULT_CPRIME = 20.0
MAX_GRID_DIM = 128

GRID_MAGIC = b"NBVGRID1"


class VoxelState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@dataclass(frozen=True)
class GridConfig:
    """Geometry and fusion constants of an occupancy grid."""

    origin: tuple[float, float, float] = (-10.0, -10.0, 0.0)
    voxel_size: float = 1.0
    dims: tuple[int, int, int] = (20, 20, 20)
    log_odds_hit: float = 2.0  # c1, per endpoint event
    log_odds_miss: float = -0.1  # c2, per pass-through event
    occupied_threshold: float = 0.5
    free_threshold: float = -0.5
    clamp_min: float = -10.0
    clamp_max: float = 10.0

    def __post_init__(self):
        if self.voxel_size <= 0.0:
            raise ValueError("voxel_size must be positive")
        if any(d < 1 for d in self.dims):
            raise ValueError("grid dims must be >= 1")
        if any(d > MAX_GRID_DIM for d in self.dims):
            raise ValueError(f"grid dims capped at {MAX_GRID_DIM} (dense storage)")
        if self.log_odds_hit <= 0.0 or self.log_odds_miss >= 0.0:
            raise ValueError("need log_odds_hit > 0 and log_odds_miss < 0")
        if not self.free_threshold < 0.0 < self.occupied_threshold:
            raise ValueError("thresholds must straddle zero")
        if self.clamp_min > self.free_threshold or self.clamp_max < self.occupied_threshold:
            raise ValueError("clamp range must contain both thresholds")

    @property
    def cprime(self) -> float:
        """Hit/miss magnitude ratio |c1 / c2|."""
        return abs(self.log_odds_hit / self.log_odds_miss)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def origin_arr(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def max_corner(self) -> np.ndarray:
        return self.origin_arr + np.asarray(self.dims) * self.voxel_size

    @classmethod
    def for_box(cls, box_min, box_max, dims=(20, 20, 20),
                cprime: float = DEFAULT_CPRIME, log_odds_hit: float = 2.0,
                **kwargs) -> "GridConfig":
        """Cubic-voxel grid covering an axis-aligned box.

        voxel_size = max(extent / dims), so the grid may extend past the box
        on the tighter axes; c2 is derived from the configured ratio.
        """
        box_min = np.asarray(box_min, dtype=float)
        box_max = np.asarray(box_max, dtype=float)
        ext = box_max - box_min
        if (ext <= 0.0).any():
            raise ValueError("box must have positive extent")
        h = float(np.max(ext / np.asarray(dims)))
        return cls(origin=tuple(box_min), voxel_size=h, dims=tuple(dims),
                   log_odds_hit=log_odds_hit,
                   log_odds_miss=-log_odds_hit / cprime, **kwargs)

    def with_cprime(self, cprime: float) -> "GridConfig":
        """Same grid, c2 rescaled so |c1/c2| = cprime (c1 held fixed)."""
        return GridConfig(
            origin=self.origin, voxel_size=self.voxel_size, dims=self.dims,
            log_odds_hit=self.log_odds_hit,
            log_odds_miss=-self.log_odds_hit / cprime,
            occupied_threshold=self.occupied_threshold,
            free_threshold=self.free_threshold,
            clamp_min=self.clamp_min, clamp_max=self.clamp_max)

    def voxel_index(self, points: np.ndarray) -> np.ndarray:
        """(N, 3) points -> (N, 3) integer voxel indices (unclamped)."""
        return np.floor(
            (np.asarray(points, dtype=float) - self.origin_arr) / self.voxel_size
        ).astype(np.int64)

    def linear_ids(self, idx3: np.ndarray) -> np.ndarray:
        """(N, 3) voxel indices -> x-fastest linear ids."""
        nx, ny, _ = self.dims
        idx3 = np.asarray(idx3)
        return idx3[..., 0] + nx * (idx3[..., 1] + ny * idx3[..., 2])

    def voxel_centers(self, idx3: np.ndarray) -> np.ndarray:
        return self.origin_arr + (np.asarray(idx3, dtype=float) + 0.5) * self.voxel_size

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo = self.origin_arr
        hi = self.max_corner
        return ((p >= lo) & (p < hi)).all(axis=-1)


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float64

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("non-finite point coordinate")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class IntegrationStats:
    rays_cast: int
    endpoint_voxels: int


@dataclass
class OccupancyGrid:
    """Dense per-voxel log-odds, 0 = unknown, clamped to the config range."""

    config: GridConfig
    log_odds: np.ndarray = None  # (nx, ny, nz) float64

    def __post_init__(self):
        if self.log_odds is None:
            self.log_odds = np.zeros(self.config.dims, dtype=np.float64)
        else:
            self.log_odds = np.asarray(self.log_odds, dtype=np.float64)
            if self.log_odds.shape != tuple(self.config.dims):
                raise ValueError("log_odds shape does not match config dims")

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.config, self.log_odds.copy())

    def flat(self) -> np.ndarray:
        """x-fastest flattened view (matches linear_ids ordering)."""
        return self.log_odds.ravel(order="F")


def backproject(depth: DepthMap) -> PointCloud:
    """World-frame 3D point per finite-depth pixel; sentinel pixels skipped."""
    dirs = camera_rays(depth.pose, depth.intrinsics)
    d = depth.depths.ravel()
    mask = np.isfinite(d)
    pts = depth.pose.position[None, :] + d[mask, None] * dirs[mask]
    return PointCloud(pts)


def traverse_ray(config: GridConfig, start, end) -> np.ndarray:
    """Ordered (K, 3) voxel indices crossed by the segment, start voxel first.

    The segment is clipped to the grid; a segment fully outside yields an
    empty array. The sequence is 6-connected with no duplicates.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    nx, ny, nz = config.dims
    out = np.empty((nx + ny + nz + 3, 3), dtype=np.int64)
    ox, oy, oz = config.origin
    n = _kernels.traverse_segment(
        ox, oy, oz, config.voxel_size, nx, ny, nz,
        start[0], start[1], start[2], end[0], end[1], end[2], out)
    return out[:n].copy()


def integrate_depth(grid: OccupancyGrid, depth: DepthMap) -> IntegrationStats:
    """Fuse one depth frame into the grid (Markov log-odds update).

    For every finite-depth pixel the crossed voxels get c2 except the
    endpoint voxel, which gets c1; sentinel pixels carve free space along
    the ray clamped to max_range; rays whose endpoints fall outside the grid
    are clipped and integrated as free-space only. Each ray updates a voxel
    at most once; the grid is clamped once after the whole frame.
    """
    cfg = grid.config
    cam = depth.pose.position
    span = cfg.max_corner - cfg.origin_arr
    margin = 10.0 * float(np.max(span))
    if np.any(np.abs(cam - (cfg.origin_arr + 0.5 * span)) > margin):
        raise ValueError(
            f"depth pose {tuple(cam)} is implausibly far from the grid")
    dirs = camera_rays(depth.pose, depth.intrinsics)
    d = depth.depths.ravel().copy()
    finite = np.isfinite(d)
    d[~finite] = depth.intrinsics.max_range
    ends = cam[None, :] + d[:, None] * dirs
    delta = np.zeros(cfg.dims, dtype=np.float64)
    end_mark = np.zeros(cfg.dims, dtype=np.bool_)
    ox, oy, oz = cfg.origin
    rays, endpoints = _kernels.integrate_frame(
        delta, end_mark, ox, oy, oz, cfg.voxel_size,
        cam[0], cam[1], cam[2], np.ascontiguousarray(ends),
        np.ascontiguousarray(finite), cfg.log_odds_hit, cfg.log_odds_miss)
    np.clip(grid.log_odds + delta, cfg.clamp_min, cfg.clamp_max,
            out=grid.log_odds)
    return IntegrationStats(int(rays), int(endpoints))


def classify(grid: OccupancyGrid) -> tuple[np.ndarray, dict[VoxelState, int]]:
    """Three-state classification and per-state counts."""
    states = classify_values(grid.log_odds, grid.config)
    counts = {
        VoxelState.UNKNOWN: int(np.count_nonzero(states == VoxelState.UNKNOWN)),
        VoxelState.FREE: int(np.count_nonzero(states == VoxelState.FREE)),
        VoxelState.OCCUPIED: int(np.count_nonzero(states == VoxelState.OCCUPIED)),
    }
    return states, counts


def classify_values(log_odds: np.ndarray, config: GridConfig) -> np.ndarray:
    """Elementwise state codes for an array of log-odds values."""
    states = np.full(log_odds.shape, VoxelState.UNKNOWN, dtype=np.uint8)
    states[log_odds >= config.occupied_threshold] = VoxelState.OCCUPIED
    states[log_odds <= config.free_threshold] = VoxelState.FREE
    return states


def occupied_ids(grid: OccupancyGrid) -> np.ndarray:
    """Sorted linear ids of Occupied voxels."""
    flat = grid.flat()
    return np.flatnonzero(flat >= grid.config.occupied_threshold)


def coverage_ratio(grid: OccupancyGrid, gt_ids: np.ndarray) -> float:
    """Percentage of ground-truth surface voxels currently Occupied.

    Only occupied voxels that lie in the ground-truth set count, so the
    ratio never exceeds 100.
    """
    gt_ids = np.asarray(gt_ids)
    if gt_ids.size == 0:
        raise ValueError("ground-truth voxel set is empty")
    flat = grid.flat()
    hit = flat[gt_ids] >= grid.config.occupied_threshold
    return 100.0 * float(np.count_nonzero(hit)) / gt_ids.size


# ---------------------------------------------------------------------------
# Snapshots

def occupied_cloud(grid: OccupancyGrid) -> PointCloud:
    """Centers of Occupied voxels."""
    idx = np.argwhere(grid.log_odds >= grid.config.occupied_threshold)
    return PointCloud(grid.config.voxel_centers(idx))


def write_occupied_ply(grid: OccupancyGrid, path) -> None:
    """ASCII PLY point cloud of Occupied voxel centers."""
    write_ply_points(occupied_cloud(grid).points, path)


def write_ply_points(points: np.ndarray, path) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(points)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for x, y, z in points:
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


# Raw dump: 32-byte little-endian header then float32 log-odds, x-fastest.
# Header: magic "NBVGRID1" (8s), dims (3H), pad (2x), voxel_size (f),
# origin (3f).
_HEADER_FMT = "<8s3H2xf3f"


def write_grid_dump(grid: OccupancyGrid, path) -> None:
    cfg = grid.config
    header = struct.pack(_HEADER_FMT, GRID_MAGIC, *cfg.dims,
                         cfg.voxel_size, *cfg.origin)
    assert len(header) == 32
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(grid.flat().astype("<f4").tobytes())


def read_grid_dump(path) -> tuple[np.ndarray, dict]:
    """Returns (log_odds array (nx, ny, nz) float32, header metadata)."""
    with open(path, "rb") as fh:
        header = fh.read(32)
        magic, nx, ny, nz, h, ox, oy, oz = struct.unpack(_HEADER_FMT, header)
        if magic != GRID_MAGIC:
            raise ValueError(f"bad grid dump magic: {magic!r}")
        body = np.frombuffer(fh.read(), dtype="<f4", count=nx * ny * nz)
    arr = body.reshape((nx, ny, nz), order="F")
    meta = {"dims": (nx, ny, nz), "voxel_size": h, "origin": (ox, oy, oz)}
    return arr, meta

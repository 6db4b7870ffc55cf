"""Per-viewpoint depth maps and Lambertian-shaded grayscale frames.

Depth is stored as Euclidean ray range (not z-depth), so back-projection is
origin + depth * direction with no intrinsics inversion. Misses carry +inf.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import BvhAccel, CameraIntrinsics, Pose5D, pose_to_frame, raycast

NO_HIT = np.inf

DEFAULT_LIGHT_DIR = np.array([-1.0, -1.0, -2.0]) / math.sqrt(6.0)
DEFAULT_AMBIENT = 0.2


@dataclass
class DepthMap:
    """Range image: depths[i, j] is the Euclidean distance along pixel (i, j)'s
    ray, +inf where nothing was hit within max_range."""

    depths: np.ndarray  # (height, width) float64, row-major
    pose: Pose5D
    intrinsics: CameraIntrinsics

    @property
    def width(self) -> int:
        return self.depths.shape[1]

    @property
    def height(self) -> int:
        return self.depths.shape[0]

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.depths)


@dataclass
class GrayFrame:
    """Shaded intensity image in [0, 1]; background pixels are 0."""

    intensities: np.ndarray  # (height, width) float64
    pose: Pose5D

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def height(self) -> int:
        return self.intensities.shape[0]


@dataclass
class FrameStack:
    """The K+1 most recent grayscale frames, oldest first."""

    k_preceding: int
    frames: list[GrayFrame] = field(default_factory=list)

    def push(self, frame: GrayFrame) -> None:
        self.frames.append(frame)
        overflow = len(self.frames) - (self.k_preceding + 1)
        if overflow > 0:
            del self.frames[:overflow]

    def __len__(self) -> int:
        return len(self.frames)


def camera_rays(pose: Pose5D, intr: CameraIntrinsics) -> np.ndarray:
    """Unit world-frame direction through each pixel center, row-major (N, 3).

    Pixel-center convention: the outermost pixel-center rays approach the
    half-FOV angles as the image grows. All rays originate at the pose
    position.
    """
    rot, _ = pose_to_frame(pose)
    w, h = intr.width, intr.height
    # u: -1..1 left to right, v: 1..-1 top to bottom, at pixel centers
    u = (2.0 * (np.arange(w) + 0.5) / w) - 1.0
    v = 1.0 - (2.0 * (np.arange(h) + 0.5) / h)
    uu, vv = np.meshgrid(u, v)
    cam = np.empty((h, w, 3))
    cam[:, :, 0] = 1.0  # forward
    cam[:, :, 1] = -uu * intr.tan_half_h  # left axis; +u is image-right
    cam[:, :, 2] = vv * intr.tan_half_v  # up
    flat = cam.reshape(-1, 3)
    flat /= np.linalg.norm(flat, axis=1, keepdims=True)
    return flat @ rot.T


def render_depth(accel: BvhAccel, pose: Pose5D, intr: CameraIntrinsics) -> DepthMap:
    """Cast one ray per pixel and record the nearest-hit range."""
    dirs = camera_rays(pose, intr)
    t, _ = raycast(accel, pose.position, dirs)
    t[~np.isfinite(t) | (t > intr.max_range)] = NO_HIT
    return DepthMap(t.reshape(intr.height, intr.width), pose, intr)


def render_gray(accel: BvhAccel, pose: Pose5D, intr: CameraIntrinsics,
                light_dir: np.ndarray = DEFAULT_LIGHT_DIR,
                ambient: float = DEFAULT_AMBIENT) -> GrayFrame:
    """Shade hit pixels as ambient + (1-ambient)*max(0, n . -light)."""
    light = np.asarray(light_dir, dtype=float)
    light = light / np.linalg.norm(light)
    dirs = camera_rays(pose, intr)
    t, tri = raycast(accel, pose.position, dirs)
    hit = (tri >= 0) & np.isfinite(t) & (t <= intr.max_range)
    out = np.zeros(len(dirs))
    if hit.any():
        mesh = accel.mesh
        if mesh.face_normals is None:
            mesh.compute_face_normals()
        normals = mesh.face_normals[tri[hit]]
        # orient normals toward the camera
        facing = np.einsum("ij,ij->i", normals, dirs[hit]) > 0.0
        normals = np.where(facing[:, None], -normals, normals)
        lambert = np.maximum(0.0, normals @ (-light))
        out[hit] = ambient + (1.0 - ambient) * lambert
    return GrayFrame(out.reshape(intr.height, intr.width), pose)


# ---------------------------------------------------------------------------
# Debug dumps (PGM)

def write_depth_pgm(depth: DepthMap, path) -> None:
    """16-bit PGM, millimeter quantization, big-endian per the PGM spec.
    Misses and anything past 65.535 m saturate at 65535."""
    mm = np.where(np.isfinite(depth.depths), depth.depths * 1000.0, 65535.0)
    mm = np.clip(np.rint(mm), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (depth.width, depth.height))
        fh.write(mm.tobytes())


def write_gray_pgm(frame: GrayFrame, path) -> None:
    """8-bit PGM of a shaded frame."""
    q = np.clip(np.rint(frame.intensities * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (frame.width, frame.height))
        fh.write(q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read back a binary PGM written by the dumpers (debug helper)."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise ValueError("not a binary PGM")
        w, h = (int(x) for x in fh.readline().split())
        maxval = int(fh.readline())
        dtype = ">u2" if maxval > 255 else np.uint8
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h)
    return data.reshape(h, w)

"""Mesh ingestion, BVH-accelerated ray casting, and 5-DoF camera pose math.

Conventions: world up is +z, world forward is +x. A pose is (x, y, z, pitch,
yaw) with yaw about +z applied first, then pitch about the camera-right axis;
roll is identically zero. The camera frame axes are (forward, left, up), so
the zero pose maps to the identity rotation.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels

TWO_PI = 2.0 * math.pi


class MeshError(ValueError):
    """Invalid or unusable mesh data."""


class MeshParseError(MeshError):
    """Malformed mesh file; message carries the offending location."""


def normalize_yaw(yaw: float) -> float:
    """Wrap a yaw angle into [-pi, pi); in-range values pass through exactly."""
    if -math.pi <= yaw < math.pi:
        return yaw
    return (yaw + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class Pose5D:
    """Camera viewpoint: 3D position plus pitch and yaw (roll-free)."""

    x: float
    y: float
    z: float
    pitch: float
    yaw: float

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite pose component: {vals}")
        if not -math.pi / 2 <= self.pitch <= math.pi / 2:
            raise ValueError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x, self.y, self.z, self.pitch, self.yaw)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: image size, vertical FOV, and sensing range."""

    width: int = 400
    height: int = 400
    vertical_fov: float = math.pi / 2
    max_range: float = 40.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not 0.0 < self.vertical_fov < math.pi:
            raise ValueError("vertical_fov must be in (0, pi)")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")

    @property
    def tan_half_v(self) -> float:
        return math.tan(self.vertical_fov / 2)

    @property
    def tan_half_h(self) -> float:
        # horizontal FOV follows from the aspect ratio
        return self.tan_half_v * self.width / self.height


@dataclass(frozen=True)
class Ray:
    """Origin plus unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass
class TriangleMesh:
    """Indexed triangle soup in meters."""

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int32
    face_normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be (V, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be (F, 3)")
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle index out of range")
        if len(self.triangles) and self.triangles.min() < 0:
            raise MeshError("negative triangle index")
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinate")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def extents(self) -> np.ndarray:
        lo, hi = self.bounds()
        return hi - lo

    def triangle_corners(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        tv = self.triangle_corners()
        cr = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
        return 0.5 * np.linalg.norm(cr, axis=1)

    def compute_face_normals(self) -> np.ndarray:
        tv = self.triangle_corners()
        n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        lens[lens == 0.0] = 1.0
        self.face_normals = n / lens
        return self.face_normals


# ---------------------------------------------------------------------------
# Mesh ingestion (OBJ and PLY; textures/materials ignored)

def load_mesh(path) -> TriangleMesh:
    """Load an OBJ or PLY file into a TriangleMesh.

    Raises FileNotFoundError, MeshParseError (with line/offset context), or
    MeshError for an empty or degenerate mesh.
    """
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such mesh file: {p}")
    suffix = p.suffix.lower()
    if suffix == ".obj":
        mesh = _load_obj(p)
    elif suffix == ".ply":
        mesh = _load_ply(p)
    else:
        raise MeshError(f"unsupported mesh format: {p.name}")
    if len(mesh.vertices) == 0 or len(mesh.triangles) == 0:
        raise MeshError(f"empty mesh: {p.name}")
    if (mesh.extents() <= 0.0).any():
        raise MeshError(f"degenerate bounding box in {p.name}")
    return mesh


def _load_obj(path: Path) -> TriangleMesh:
    verts: list[list[float]] = []
    faces: list[tuple[int, list[int]]] = []
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshParseError(f"{path.name}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise MeshParseError(f"{path.name}:{lineno}: bad vertex coordinate") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshParseError(f"{path.name}:{lineno}: face needs >= 3 vertices")
                try:
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                except ValueError:
                    raise MeshParseError(f"{path.name}:{lineno}: bad face index") from None
                faces.append((lineno, idx))
            # vn/vt/usemtl/etc. are ignored
    tris: list[list[int]] = []
    nv = len(verts)
    for lineno, idx in faces:
        resolved = []
        for i in idx:
            if i < 0:
                i = nv + 1 + i  # OBJ negative indices count from the end
            if not 1 <= i <= nv:
                raise MeshParseError(f"{path.name}:{lineno}: vertex index {i} out of range (1..{nv})")
            resolved.append(i - 1)
        for k in range(1, len(resolved) - 1):  # fan triangulation
            tris.append([resolved[0], resolved[k], resolved[k + 1]])
    if not verts or not tris:
        raise MeshError(f"empty mesh: {path.name}")
    return TriangleMesh(np.array(verts), np.array(tris))


_PLY_SCALARS = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _load_ply(path: Path) -> TriangleMesh:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise MeshParseError(f"{path.name}:1: not a PLY file")
        fmt = None
        elements: list[tuple[str, int, list[tuple[str, str, str | None]]]] = []
        lineno = 1
        while True:
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise MeshParseError(f"{path.name}:{lineno}: unexpected end of header")
            line = raw.decode("ascii", errors="replace").strip()
            if not line or line.startswith("comment") or line.startswith("obj_info"):
                continue
            parts = line.split()
            if parts[0] == "format":
                if parts[1] == "ascii":
                    fmt = "ascii"
                elif parts[1] == "binary_little_endian":
                    fmt = "binary"
                else:
                    raise MeshParseError(f"{path.name}:{lineno}: unsupported format {parts[1]}")
            elif parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if not elements:
                    raise MeshParseError(f"{path.name}:{lineno}: property before element")
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], parts[2], parts[3]))
                else:
                    elements[-1][2].append((parts[2], parts[1], None))
            elif parts[0] == "end_header":
                break
        if fmt is None:
            raise MeshParseError(f"{path.name}: missing format line")

        verts = None
        tris: list[list[int]] = []
        for name, count, props in elements:
            if name == "vertex":
                verts = _read_ply_vertices(fh, path, fmt, count, props, lineno)
            elif name == "face":
                tris = _read_ply_faces(fh, path, fmt, count, props)
            else:
                _skip_ply_element(fh, path, fmt, count, props)
        if verts is None or not tris:
            raise MeshError(f"empty mesh: {path.name}")
        mesh = TriangleMesh(verts, np.array(tris))
        return mesh


def _read_ply_vertices(fh, path, fmt, count, props, header_lines):
    names = [p[0] for p in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise MeshParseError(f"{path.name}: vertex element lacks property {axis}")
    if any(p[2] is not None for p in props):
        raise MeshParseError(f"{path.name}: list property on vertex element unsupported")
    cols = [names.index(a) for a in ("x", "y", "z")]
    if fmt == "ascii":
        rows = []
        for i in range(count):
            line = fh.readline().decode("ascii", errors="replace").split()
            if len(line) < len(props):
                raise MeshParseError(
                    f"{path.name}:{header_lines + 1 + i}: short vertex row")
            try:
                rows.append([float(line[c]) for c in cols])
            except ValueError:
                raise MeshParseError(
                    f"{path.name}:{header_lines + 1 + i}: bad vertex value") from None
        return np.array(rows)
    fmt_str = "<" + "".join(_PLY_SCALARS[p[1]] for p in props)
    size = struct.calcsize(fmt_str)
    buf = fh.read(size * count)
    if len(buf) != size * count:
        raise MeshParseError(f"{path.name}: truncated vertex data")
    rows = np.array([struct.unpack_from(fmt_str, buf, i * size) for i in range(count)])
    return rows[:, cols].astype(np.float64)


def _read_ply_faces(fh, path, fmt, count, props):
    if len(props) != 1 or props[0][2] is None or props[0][0] not in (
            "vertex_indices", "vertex_index"):
        raise MeshParseError(f"{path.name}: face element must be a single vertex_indices list")
    tris: list[list[int]] = []
    if fmt == "ascii":
        for _ in range(count):
            toks = fh.readline().decode("ascii", errors="replace").split()
            if not toks:
                raise MeshParseError(f"{path.name}: truncated face data")
            n = int(toks[0])
            if len(toks) < 1 + n or n < 3:
                raise MeshParseError(f"{path.name}: malformed face row")
            idx = [int(t) for t in toks[1:1 + n]]
            for k in range(1, n - 1):
                tris.append([idx[0], idx[k], idx[k + 1]])
        return tris
    count_fmt = "<" + _PLY_SCALARS[props[0][1]]
    count_size = struct.calcsize(count_fmt)
    index_fmt = _PLY_SCALARS[props[0][2]]
    index_size = struct.calcsize("<" + index_fmt)
    for _ in range(count):
        buf = fh.read(count_size)
        if len(buf) != count_size:
            raise MeshParseError(f"{path.name}: truncated face data")
        n = struct.unpack(count_fmt, buf)[0]
        if n < 3:
            raise MeshParseError(f"{path.name}: face with {n} vertices")
        buf = fh.read(index_size * n)
        if len(buf) != index_size * n:
            raise MeshParseError(f"{path.name}: truncated face data")
        idx = struct.unpack("<" + index_fmt * n, buf)
        for k in range(1, n - 1):
            tris.append([idx[0], idx[k], idx[k + 1]])
    return tris


def _skip_ply_element(fh, path, fmt, count, props):
    if fmt == "ascii":
        for _ in range(count):
            fh.readline()
        return
    if any(p[2] is not None for p in props):
        raise MeshParseError(f"{path.name}: cannot skip binary list element")
    size = struct.calcsize("<" + "".join(_PLY_SCALARS[p[1]] for p in props))
    fh.read(size * count)


def normalize_mesh(mesh: TriangleMesh,
                   target_extent=(15.0, 15.0, 8.0)) -> TriangleMesh:
    """Recenter the mesh's bbox bottom-center onto the origin and scale it
    uniformly so the tightest axis exactly meets target_extent.

    The scale factor is min(target / extent), so the largest ratio of
    bbox-extent to target-extent becomes 1. Idempotent after one call.
    """
    target = np.asarray(target_extent, dtype=float)
    if (target <= 0.0).any():
        raise ValueError("target extents must be positive")
    lo, hi = mesh.bounds()
    ext = hi - lo
    if (ext <= 0.0).any():
        raise MeshError(f"degenerate bounding box: extents {ext}")
    scale = float(np.min(target / ext))
    anchor = np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, lo[2]])
    verts = (mesh.vertices - anchor) * scale
    return TriangleMesh(verts, mesh.triangles.copy())


# ---------------------------------------------------------------------------
# Pose <-> rigid frame

def pose_to_frame(pose: Pose5D) -> tuple[np.ndarray, np.ndarray]:
    """Rotation (columns = camera forward/left/up in world) and translation."""
    sy, cy = math.sin(pose.yaw), math.cos(pose.yaw)
    sp, cp = math.sin(pose.pitch), math.cos(pose.pitch)
    fwd = np.array([cp * cy, cp * sy, sp])
    left = np.array([-sy, cy, 0.0])
    up = np.array([-sp * cy, -sp * sy, cp])
    rot = np.column_stack([fwd, left, up])
    return rot, np.array([pose.x, pose.y, pose.z])


def pose_from_frame(rot: np.ndarray, trans: np.ndarray) -> Pose5D:
    """Inverse of pose_to_frame; exact at the pitch = +-pi/2 endpoints too."""
    fwd = rot[:, 0]
    left = rot[:, 1]
    pitch = math.asin(min(1.0, max(-1.0, float(fwd[2]))))
    yaw = math.atan2(-float(left[0]), float(left[1]))
    return Pose5D(float(trans[0]), float(trans[1]), float(trans[2]), pitch, yaw)


def look_at_pose(position, target) -> Pose5D:
    """Pose at `position` whose forward axis points at `target`."""
    position = np.asarray(position, dtype=float)
    d = np.asarray(target, dtype=float) - position
    dist = np.linalg.norm(d)
    if dist == 0.0:
        raise ValueError("look-at target coincides with the position")
    d = d / dist
    pitch = math.asin(min(1.0, max(-1.0, float(d[2]))))
    yaw = math.atan2(float(d[1]), float(d[0])) if abs(d[2]) < 1.0 else 0.0
    return Pose5D(position[0], position[1], position[2], pitch, yaw)


# ---------------------------------------------------------------------------
# BVH construction and ray queries

_LEAF_SIZE = 4


@dataclass
class RayHit:
    distance: float
    triangle: int
    normal: np.ndarray


@dataclass
class BvhAccel:
    """Flat-array BVH over a triangle mesh; immutable once built."""

    mesh: TriangleMesh
    nodes_min: np.ndarray  # (N, 3) float64
    nodes_max: np.ndarray
    node_left: np.ndarray  # (N,) int32: child index, or first slot for leaves
    node_count: np.ndarray  # (N,) int32: 0 for internal, leaf tri count else
    tri_v0: np.ndarray  # reordered triangle data, (F, 3)
    tri_e1: np.ndarray
    tri_e2: np.ndarray
    tri_id: np.ndarray  # (F,) int32 original triangle index per slot

    @property
    def n_nodes(self) -> int:
        return len(self.node_left)


def build_bvh(mesh: TriangleMesh) -> BvhAccel:
    """Median-split BVH; ray queries match brute force exactly."""
    if len(mesh.triangles) == 0:
        raise MeshError("cannot build a BVH over an empty mesh")
    tv = mesh.triangle_corners()
    tmin = tv.min(axis=1)
    tmax = tv.max(axis=1)
    cent = 0.5 * (tmin + tmax)
    order = np.arange(len(mesh.triangles), dtype=np.int64)

    nodes_min: list[np.ndarray] = []
    nodes_max: list[np.ndarray] = []
    node_left: list[int] = []
    node_count: list[int] = []

    def new_node() -> int:
        nodes_min.append(np.zeros(3))
        nodes_max.append(np.zeros(3))
        node_left.append(0)
        node_count.append(0)
        return len(node_left) - 1

    root = new_node()
    stack = [(root, 0, len(order))]
    while stack:
        ni, s, e = stack.pop()
        idx = order[s:e]
        nodes_min[ni] = tmin[idx].min(axis=0)
        nodes_max[ni] = tmax[idx].max(axis=0)
        if e - s <= _LEAF_SIZE:
            node_left[ni] = s
            node_count[ni] = e - s
            continue
        clo = cent[idx].min(axis=0)
        chi = cent[idx].max(axis=0)
        axis = int(np.argmax(chi - clo))
        if chi[axis] - clo[axis] <= 0.0:
            node_left[ni] = s
            node_count[ni] = e - s
            continue
        local = np.argsort(cent[idx, axis], kind="stable")
        order[s:e] = idx[local]
        mid = (s + e) // 2
        li = new_node()
        new_node()
        node_left[ni] = li
        node_count[ni] = 0
        stack.append((li + 1, mid, e))
        stack.append((li, s, mid))

    tv_ordered = tv[order]
    return BvhAccel(
        mesh=mesh,
        nodes_min=np.ascontiguousarray(nodes_min, dtype=np.float64),
        nodes_max=np.ascontiguousarray(nodes_max, dtype=np.float64),
        node_left=np.asarray(node_left, dtype=np.int32),
        node_count=np.asarray(node_count, dtype=np.int32),
        tri_v0=np.ascontiguousarray(tv_ordered[:, 0]),
        tri_e1=np.ascontiguousarray(tv_ordered[:, 1] - tv_ordered[:, 0]),
        tri_e2=np.ascontiguousarray(tv_ordered[:, 2] - tv_ordered[:, 0]),
        tri_id=order.astype(np.int32),
    )


def raycast(accel: BvhAccel, origins: np.ndarray,
            dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batch nearest-hit query: distances (inf on miss) and triangle ids (-1)."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    if origins.ndim == 1:
        origins = np.broadcast_to(origins, dirs.shape)
        origins = np.ascontiguousarray(origins)
    n = len(dirs)
    out_t = np.empty(n, dtype=np.float64)
    out_tri = np.empty(n, dtype=np.int32)
    _kernels.raycast_batch(
        accel.nodes_min, accel.nodes_max, accel.node_left, accel.node_count,
        accel.tri_v0, accel.tri_e1, accel.tri_e2, accel.tri_id,
        origins, dirs, out_t, out_tri)
    return out_t, out_tri


def ray_intersect(accel: BvhAccel, ray: Ray) -> RayHit | None:
    """Nearest intersection past the 1e-6 m epsilon, or None.

    The returned normal is unit length and oriented toward the ray origin;
    grazing ties are broken by the lowest triangle id.
    """
    t, tri = raycast(accel, ray.origin[None, :], ray.direction[None, :])
    if tri[0] < 0:
        return None
    return RayHit(float(t[0]), int(tri[0]),
                  _oriented_normal(accel.mesh, int(tri[0]), ray.direction))


def _oriented_normal(mesh: TriangleMesh, tri: int, direction: np.ndarray) -> np.ndarray:
    tv = mesh.vertices[mesh.triangles[tri]]
    n = np.cross(tv[1] - tv[0], tv[2] - tv[0])
    n = n / np.linalg.norm(n)
    if float(np.dot(n, direction)) > 0.0:
        n = -n
    return n


# ---------------------------------------------------------------------------
# Proximity and containment queries (used for collision checks)

def point_mesh_distance(mesh: TriangleMesh, point) -> float:
    """Exact distance from a point to the mesh surface."""
    p = np.asarray(point, dtype=float)
    tv = mesh.triangle_corners()
    v0 = tv[:, 0]
    e1 = tv[:, 1] - tv[:, 0]
    e2 = tv[:, 2] - tv[:, 0]
    w = p[None, :] - v0
    d00 = np.einsum("ij,ij->i", e1, e1)
    d01 = np.einsum("ij,ij->i", e1, e2)
    d11 = np.einsum("ij,ij->i", e2, e2)
    d20 = np.einsum("ij,ij->i", w, e1)
    d21 = np.einsum("ij,ij->i", w, e2)
    denom = d00 * d11 - d01 * d01
    safe = np.abs(denom) > 1e-30
    inv = np.where(safe, denom, 1.0)
    u = (d11 * d20 - d01 * d21) / inv
    v = (d00 * d21 - d01 * d20) / inv
    inside = safe & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0)
    proj = v0 + u[:, None] * e1 + v[:, None] * e2
    d_face = np.where(inside, np.sum((p[None, :] - proj) ** 2, axis=1), np.inf)

    def seg_dist_sq(a, ab):
        denom_seg = np.einsum("ij,ij->i", ab, ab)
        denom_seg = np.where(denom_seg > 0.0, denom_seg, 1.0)
        t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, ab) / denom_seg, 0.0, 1.0)
        q = a + t[:, None] * ab
        return np.sum((p[None, :] - q) ** 2, axis=1)

    d_edges = np.minimum(
        seg_dist_sq(v0, e1),
        np.minimum(seg_dist_sq(v0, e2), seg_dist_sq(v0 + e1, e2 - e1)))
    return float(np.sqrt(np.minimum(d_face, d_edges).min()))


_PARITY_DIR = np.array([0.57735026918962584, 0.57735026918962573, 0.577350269189626])


def point_in_mesh(mesh: TriangleMesh, point) -> bool:
    """Ray-parity containment test (meaningful for watertight meshes)."""
    p = np.asarray(point, dtype=float)
    d = _PARITY_DIR
    tv = mesh.triangle_corners()
    v0 = tv[:, 0]
    e1 = tv[:, 1] - tv[:, 0]
    e2 = tv[:, 2] - tv[:, 0]
    pvec = np.cross(np.broadcast_to(d, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, det, 1.0)
    tvec = p[None, :] - v0
    u = np.einsum("ij,ij->i", tvec, pvec) / inv
    qvec = np.cross(tvec, e1)
    v = (qvec @ d) / inv
    t = np.einsum("ij,ij->i", e2, qvec) / inv
    crossing = ok & (u > 0.0) & (v > 0.0) & (u + v < 1.0) & (t > 1e-9)
    return bool(np.count_nonzero(crossing) % 2 == 1)

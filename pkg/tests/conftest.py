import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nbvsim.geometry import TriangleMesh, build_bvh, load_mesh
from nbvsim.mapping import GridConfig

CUBE_OBJ = """\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def box_mesh(lo, hi) -> TriangleMesh:
    """Closed axis-aligned box with outward-facing triangles."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    f = np.array([
        [0, 2, 1], [0, 3, 2],  # bottom
        [4, 5, 6], [4, 6, 7],  # top
        [0, 1, 5], [0, 5, 4],  # y = y0
        [1, 2, 6], [1, 6, 5],  # x = x1
        [2, 3, 7], [2, 7, 6],  # y = y1
        [3, 0, 4], [3, 4, 7],  # x = x0
    ])
    return TriangleMesh(v, f)


@pytest.fixture(scope="session")
def cube_obj_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("meshes") / "cube.obj"
    p.write_text(CUBE_OBJ)
    return p


@pytest.fixture(scope="session")
def cube_ply_ascii_path(tmp_path_factory):
    mesh = load_mesh_text(CUBE_OBJ)
    p = tmp_path_factory.mktemp("meshes") / "cube_ascii.ply"
    lines = ["ply", "format ascii 1.0",
             f"element vertex {len(mesh.vertices)}",
             "property float x", "property float y", "property float z",
             f"element face {len(mesh.triangles)}",
             "property list uchar int vertex_indices", "end_header"]
    for vx, vy, vz in mesh.vertices:
        lines.append(f"{vx} {vy} {vz}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    p.write_text("\n".join(lines) + "\n")
    return p


@pytest.fixture(scope="session")
def cube_ply_binary_path(tmp_path_factory):
    mesh = load_mesh_text(CUBE_OBJ)
    p = tmp_path_factory.mktemp("meshes") / "cube_bin.ply"
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(mesh.vertices)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              f"element face {len(mesh.triangles)}\n"
              "property list uchar int vertex_indices\nend_header\n")
    with open(p, "wb") as fh:
        fh.write(header.encode("ascii"))
        for vx, vy, vz in mesh.vertices:
            fh.write(struct.pack("<3f", vx, vy, vz))
        for a, b, c in mesh.triangles:
            fh.write(struct.pack("<B3i", 3, a, b, c))
    return p


def load_mesh_text(obj_text: str) -> TriangleMesh:
    verts, faces = [], []
    for line in obj_text.splitlines():
        parts = line.split("#")[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x) - 1 for x in parts[1:4]])
    return TriangleMesh(np.array(verts), np.array(faces))


@pytest.fixture(scope="session")
def unit_cube_mesh():
    return load_mesh_text(CUBE_OBJ)


@pytest.fixture(scope="session")
def wall_mesh():
    """Two triangles spanning the plane x = 5, large enough to fill a 90-degree
    frustum viewed from the origin."""
    v = np.array([
        [5.0, -40.0, -40.0], [5.0, 40.0, -40.0],
        [5.0, 40.0, 40.0], [5.0, -40.0, 40.0],
    ])
    f = np.array([[0, 1, 2], [0, 2, 3]])
    return TriangleMesh(v, f)


@pytest.fixture(scope="session")
def wall_bvh(wall_mesh):
    return build_bvh(wall_mesh)


@pytest.fixture(scope="session")
def aligned_cube_mesh():
    """4 m cube aligned to 1 m voxel boundaries, resting on the ground."""
    return box_mesh([-2.0, -2.0, 0.0], [2.0, 2.0, 4.0])


@pytest.fixture(scope="session")
def aligned_cube_bvh(aligned_cube_mesh):
    return build_bvh(aligned_cube_mesh)


@pytest.fixture(scope="session")
def default_grid():
    return GridConfig()


@pytest.fixture(scope="session")
def small_grid():
    """Compact grid for brute-force fusion comparisons."""
    return GridConfig(origin=(-6.0, -6.0, 0.0), voxel_size=1.0, dims=(12, 12, 12))

"""Procedural watertight house meshes so the benchmark runs without any
external dataset. Each house is a union of closed solids (box body, gabled
roof prism, optional wings, porch pillars) whose volumes never overlap, so
every edge is shared by exactly two faces and ray-parity containment works.
"""

import json
import math
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # bottom (z = lo)
    [4, 5, 6], [4, 6, 7],  # top (z = hi)
    [0, 1, 5], [0, 5, 4],  # y = lo
    [1, 2, 6], [1, 6, 5],  # x = hi
    [2, 3, 7], [2, 7, 6],  # y = hi
    [3, 0, 4], [3, 4, 7],  # x = lo
])


def box_solid(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    verts = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    return verts, _BOX_FACES.copy()


def gable_solid(x0, x1, y0, y1, z_base, ridge_height,
                ridge_axis: str = "x") -> tuple[np.ndarray, np.ndarray]:
    """Closed triangular prism sitting on the rectangle [x0,x1]x[y0,y1] at
    z_base, with the ridge along the given axis through the midline."""
    zt = z_base + ridge_height
    if ridge_axis == "x":
        ym = 0.5 * (y0 + y1)
        verts = np.array([
            [x0, y0, z_base], [x1, y0, z_base],
            [x1, y1, z_base], [x0, y1, z_base],
            [x0, ym, zt], [x1, ym, zt],
        ])
        faces = np.array([
            [0, 2, 1], [0, 3, 2],  # base, facing down
            [0, 1, 5], [0, 5, 4],  # slope y = y0 side
            [3, 4, 5], [3, 5, 2],  # slope y = y1 side
            [0, 4, 3],  # gable end x = x0
            [1, 2, 5],  # gable end x = x1
        ])
    elif ridge_axis == "y":
        xm = 0.5 * (x0 + x1)
        verts = np.array([
            [x0, y0, z_base], [x1, y0, z_base],
            [x1, y1, z_base], [x0, y1, z_base],
            [xm, y0, zt], [xm, y1, zt],
        ])
        faces = np.array([
            [0, 2, 1], [0, 3, 2],
            [1, 2, 5], [1, 5, 4],  # slope x = x1 side
            [0, 4, 5], [0, 5, 3],  # slope x = x0 side
            [0, 1, 4],  # gable end y = y0
            [2, 3, 5],  # gable end y = y1
        ])
    else:
        raise ValueError("ridge_axis must be 'x' or 'y'")
    return verts, faces


def _merge(parts: list[tuple[np.ndarray, np.ndarray]]) -> TriangleMesh:
    verts = []
    faces = []
    offset = 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + offset)
        offset += len(v)
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def generate_house(seed: int = 0) -> TriangleMesh:
    """One randomized house; identical for identical seeds.

    Besides the body and roof, houses get occlusion features (courtyard
    wings, porch pillar rows, detached sheds) so that some surface patches
    are only visible from narrow viewing-angle windows.
    """
    rng = np.random.default_rng(seed)
    parts = []

    w = rng.uniform(8.0, 13.0)  # body x extent
    d = rng.uniform(7.0, 12.0)  # body y extent
    h = rng.uniform(4.0, 6.0)
    eave = rng.uniform(0.8, 1.4)  # roof overhang; shadows the wall tops
    parts.append(box_solid([-w / 2, -d / 2, 0.0], [w / 2, d / 2, h]))
    roof_h = rng.uniform(1.2, 2.8)
    parts.append(gable_solid(-w / 2 - eave, w / 2 + eave,
                             -d / 2 - eave, d / 2 + eave, h, roof_h, "x"))

    sides = ["+x", "-x", "+y", "-y"]
    rng.shuffle(sides)

    def wing(side, wl, ww, wh, off=0.0):
        if side in ("+x", "-x"):
            x0, x1 = (w / 2, w / 2 + ww) if side == "+x" else (-w / 2 - ww, -w / 2)
            y0, y1 = off - wl / 2, off + wl / 2
            ridge = "y"
        else:
            y0, y1 = (d / 2, d / 2 + ww) if side == "+y" else (-d / 2 - ww, -d / 2)
            x0, x1 = off - wl / 2, off + wl / 2
            ridge = "x"
        parts.append(box_solid([x0, y0, 0.0], [x1, y1, wh]))
        if rng.random() < 0.7:
            # eaves only on the faces not meeting the body; cap the ridge
            # below the body's own eave so the solids stay disjoint
            we = rng.uniform(0.3, 0.7)
            ex0 = 0.0 if side == "+x" else we
            ex1 = 0.0 if side == "-x" else we
            ey0 = 0.0 if side == "+y" else we
            ey1 = 0.0 if side == "-y" else we
            parts.append(gable_solid(x0 - ex0, x1 + ex1, y0 - ey0, y1 + ey1,
                                     wh, min(rng.uniform(0.6, 1.4), h - wh),
                                     ridge))

    if rng.random() < 0.6:
        # courtyard: two parallel wings forming a deep pocket on one side
        side = sides.pop()
        along = d if side in ("+x", "-x") else w
        gap = rng.uniform(1.8, 3.0)
        wl = rng.uniform(1.8, max(2.0, (along - gap) / 2 - 0.5))
        ww = rng.uniform(4.0, 6.0)
        wh = rng.uniform(2.2, h - 0.4)
        off = (gap + wl) / 2
        wing(side, wl, ww, wh, off=+off)
        wing(side, wl, ww, wh, off=-off)
    else:
        for _ in range(int(rng.integers(1, 3))):
            side = sides.pop()
            wing(side, wl=rng.uniform(3.0, min(w, d) - 1.0),
                 ww=rng.uniform(2.5, 5.0), wh=rng.uniform(2.0, h - 0.5),
                 off=rng.uniform(-0.2, 0.2) * min(w, d) / 2)

    if sides:
        # deep porch: slab roof on a pillar row; the wall and slab underside
        # behind the pillars are only visible from low, aligned viewpoints
        side = sides.pop()
        n_pillars = int(rng.integers(3, 6))
        porch_depth = rng.uniform(2.5, 3.5)
        porch_h = rng.uniform(1.9, min(2.5, h - 0.3))
        along = w if side in ("+y", "-y") else d
        span = rng.uniform(0.6, 0.9) * along
        ts = np.linspace(-span / 2, span / 2, n_pillars)
        pr = rng.uniform(0.18, 0.32)
        for t in ts:
            if side == "-y":
                parts.append(box_solid([t - pr, -d / 2 - porch_depth, 0.0],
                                       [t + pr, -d / 2, porch_h]))
            elif side == "+y":
                parts.append(box_solid([t - pr, d / 2, 0.0],
                                       [t + pr, d / 2 + porch_depth, porch_h]))
            elif side == "+x":
                parts.append(box_solid([w / 2, t - pr, 0.0],
                                       [w / 2 + porch_depth, t + pr, porch_h]))
            else:
                parts.append(box_solid([-w / 2 - porch_depth, t - pr, 0.0],
                                       [-w / 2, t + pr, porch_h]))
        lo_t, hi_t = -span / 2 - pr, span / 2 + pr
        if side == "-y":
            parts.append(box_solid([lo_t, -d / 2 - porch_depth, porch_h],
                                   [hi_t, -d / 2, porch_h + 0.25]))
        elif side == "+y":
            parts.append(box_solid([lo_t, d / 2, porch_h],
                                   [hi_t, d / 2 + porch_depth, porch_h + 0.25]))
        elif side == "+x":
            parts.append(box_solid([w / 2, lo_t, porch_h],
                                   [w / 2 + porch_depth, hi_t, porch_h + 0.25]))
        else:
            parts.append(box_solid([-w / 2 - porch_depth, lo_t, porch_h],
                                   [-w / 2, hi_t, porch_h + 0.25]))

    if rng.random() < 0.75 and sides:
        # detached shed: leaves a narrow occluded alley along one face
        side = sides.pop()
        alley = rng.uniform(1.2, 2.0)
        sw = rng.uniform(2.0, 3.5)
        sl = rng.uniform(2.5, 5.0)
        sh = rng.uniform(1.8, 2.8)
        off = rng.uniform(-0.25, 0.25) * min(w, d) / 2
        if side in ("+x", "-x"):
            x0 = w / 2 + alley if side == "+x" else -w / 2 - alley - sw
            box = [x0, off - sl / 2, 0.0], [x0 + sw, off + sl / 2, sh]
            ridge = "y"
        else:
            y0 = d / 2 + alley if side == "+y" else -d / 2 - alley - sw
            box = [off - sl / 2, y0, 0.0], [off + sl / 2, y0 + sw, sh]
            ridge = "x"
        parts.append(box_solid(*box))
        parts.append(gable_solid(box[0][0], box[1][0], box[0][1], box[1][1],
                                 sh, rng.uniform(0.5, 1.0), ridge))

    return _merge(parts)


def write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write("# nbvsim procedural house\n")
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def edge_face_counts(mesh: TriangleMesh) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in mesh.triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            counts[key] = counts.get(key, 0) + 1
    return counts


def is_watertight(mesh: TriangleMesh) -> bool:
    """Every edge shared by exactly two faces."""
    return all(n == 2 for n in edge_face_counts(mesh).values())


def generate_scene_files(count: int, seed: int, out_dir,
                         target_extent=(10.0, 10.0, 6.0)) -> Path:
    """Write `count` house OBJs plus a scene manifest; returns the manifest
    path. House i is seeded from (seed, i), so runs are reproducible."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        mesh = generate_house(seed=int(seed) * 100_003 + i)
        name = f"house_{i:03d}.obj"
        write_obj(mesh, out / name)
        entries.append({"id": f"house_{i:03d}", "mesh": name,
                        "target_extent": list(target_extent)})
    manifest = out / "scenes.json"
    manifest.write_text(json.dumps({"scenes": entries}, indent=2) + "\n")
    return manifest

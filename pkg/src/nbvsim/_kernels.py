"""Numba-compiled inner loops: BVH ray casting, voxel-grid DDA, info-gain scoring.

Everything here is an implementation detail behind the public modules; the
test suite checks all of it against independent pure-numpy oracles.
"""

import numpy as np
from numba import njit, prange

# Hits closer than this along the ray are ignored (self-intersection guard).
T_MIN = 1e-6
# Barycentric slack so edge/vertex grazes register on all adjacent triangles.
BARY_EPS = 1e-10
# Two hits within this distance count as a tie (broken by lowest triangle id).
TIE_EPS = 1e-9

_STACK_DEPTH = 64


@njit(cache=True, error_model="numpy")
def _ray_box(ox, oy, oz, ix, iy, iz, bminx, bminy, bminz, bmaxx, bmaxy, bmaxz, t_best):
    """Slab test: does the ray hit the AABB at a distance < t_best?"""
    t1 = (bminx - ox) * ix
    t2 = (bmaxx - ox) * ix
    tnear = min(t1, t2)
    tfar = max(t1, t2)
    t1 = (bminy - oy) * iy
    t2 = (bmaxy - oy) * iy
    tnear = max(tnear, min(t1, t2))
    tfar = min(tfar, max(t1, t2))
    t1 = (bminz - oz) * iz
    t2 = (bmaxz - oz) * iz
    tnear = max(tnear, min(t1, t2))
    tfar = min(tfar, max(t1, t2))
    return tnear <= tfar and tfar >= 0.0 and tnear < t_best


@njit(cache=True, error_model="numpy")
def _raycast_one(nmin, nmax, nleft, ncount, v0, e1, e2, tri_id,
                 ox, oy, oz, dx, dy, dz):
    """Nearest hit of one ray against the BVH.

    Returns (t, original_triangle_id); t = inf and id = -1 on a miss.
    Ties within TIE_EPS go to the lowest original triangle id so traversal
    order can never change the result.
    """
    inv_dx = 1.0 / dx
    inv_dy = 1.0 / dy
    inv_dz = 1.0 / dz
    best_t = np.inf
    best_id = -1
    stack = np.empty(_STACK_DEPTH, np.int64)
    top = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _ray_box(ox, oy, oz, inv_dx, inv_dy, inv_dz,
                        nmin[node, 0], nmin[node, 1], nmin[node, 2],
                        nmax[node, 0], nmax[node, 1], nmax[node, 2],
                        best_t + TIE_EPS):
            continue
        count = ncount[node]
        if count == 0:
            child = nleft[node]
            stack[top] = child
            stack[top + 1] = child + 1
            top += 2
            continue
        first = nleft[node]
        for k in range(first, first + count):
            ax = v0[k, 0]
            ay = v0[k, 1]
            az = v0[k, 2]
            e1x = e1[k, 0]
            e1y = e1[k, 1]
            e1z = e1[k, 2]
            e2x = e2[k, 0]
            e2y = e2[k, 1]
            e2z = e2[k, 2]
            # Moller-Trumbore, boundary-inclusive
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if det > -1e-14 and det < 1e-14:
                continue
            inv_det = 1.0 / det
            tx = ox - ax
            ty = oy - ay
            tz = oz - az
            u = (tx * px + ty * py + tz * pz) * inv_det
            if u < -BARY_EPS or u > 1.0 + BARY_EPS:
                continue
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv_det
            if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
            if t <= T_MIN:
                continue
            if t < best_t - TIE_EPS:
                best_t = t
                best_id = tri_id[k]
            elif t <= best_t + TIE_EPS and (best_id < 0 or tri_id[k] < best_id):
                if t < best_t:
                    best_t = t
                best_id = tri_id[k]
    return best_t, best_id


@njit(cache=True, parallel=True, error_model="numpy")
def raycast_batch(nmin, nmax, nleft, ncount, v0, e1, e2, tri_id,
                  origins, dirs, out_t, out_tri):
    """Nearest-hit distances and triangle ids for a batch of rays."""
    n = dirs.shape[0]
    for r in prange(n):
        t, tid = _raycast_one(nmin, nmax, nleft, ncount, v0, e1, e2, tri_id,
                              origins[r, 0], origins[r, 1], origins[r, 2],
                              dirs[r, 0], dirs[r, 1], dirs[r, 2])
        out_t[r] = t
        out_tri[r] = tid


# ---------------------------------------------------------------------------
# Voxel-grid segment traversal (Amanatides-Woo DDA, 6-connected, exact)

@njit(cache=True, error_model="numpy")
def _clip_segment(sx, sy, sz, ex, ey, ez, gx0, gy0, gz0, gx1, gy1, gz1):
    """Clip the segment s->e to the grid AABB.

    Returns (t0, t1) with p(t) = s + t*(e - s); t0 > t1 means no overlap.
    """
    t0 = 0.0
    t1 = 1.0
    for axis in range(3):
        if axis == 0:
            o = sx
            d = ex - sx
            lo = gx0
            hi = gx1
        elif axis == 1:
            o = sy
            d = ey - sy
            lo = gy0
            hi = gy1
        else:
            o = sz
            d = ez - sz
            lo = gz0
            hi = gz1
        if d > -1e-300 and d < 1e-300:
            if o < lo or o > hi:
                return 1.0, -1.0
        else:
            ta = (lo - o) / d
            tb = (hi - o) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    return t0, t1


@njit(cache=True, error_model="numpy")
def _voxel_of(x, lo, h, n):
    i = int(np.floor((x - lo) / h))
    if i < 0:
        i = 0
    elif i >= n:
        i = n - 1
    return i


@njit(cache=True, error_model="numpy")
def traverse_segment(ox, oy, oz, h, nx, ny, nz,
                     sx, sy, sz, ex, ey, ez, out_idx):
    """Write the ordered voxel indices crossed by the segment into out_idx.

    The segment is clipped to the grid first. Returns the number of voxels
    written (0 if the segment misses the grid entirely). out_idx must have
    room for nx + ny + nz + 3 rows.
    """
    gx1 = ox + nx * h
    gy1 = oy + ny * h
    gz1 = oz + nz * h
    t0, t1 = _clip_segment(sx, sy, sz, ex, ey, ez, ox, oy, oz, gx1, gy1, gz1)
    if t1 < t0:
        return 0
    dx = ex - sx
    dy = ey - sy
    dz = ez - sz
    px = sx + t0 * dx
    py = sy + t0 * dy
    pz = sz + t0 * dz
    ix = _voxel_of(px, ox, h, nx)
    iy = _voxel_of(py, oy, h, ny)
    iz = _voxel_of(pz, oz, h, nz)
    qx = sx + t1 * dx
    qy = sy + t1 * dy
    qz = sz + t1 * dz
    fx = _voxel_of(qx, ox, h, nx)
    fy = _voxel_of(qy, oy, h, ny)
    fz = _voxel_of(qz, oz, h, nz)

    stepx = 1 if dx > 0 else -1
    stepy = 1 if dy > 0 else -1
    stepz = 1 if dz > 0 else -1
    if dx != 0.0:
        bx = ox + (ix + 1) * h if dx > 0 else ox + ix * h
        tmx = (bx - sx) / dx
        tdx = h / abs(dx)
    else:
        tmx = np.inf
        tdx = np.inf
    if dy != 0.0:
        by = oy + (iy + 1) * h if dy > 0 else oy + iy * h
        tmy = (by - sy) / dy
        tdy = h / abs(dy)
    else:
        tmy = np.inf
        tdy = np.inf
    if dz != 0.0:
        bz = oz + (iz + 1) * h if dz > 0 else oz + iz * h
        tmz = (bz - sz) / dz
        tdz = h / abs(dz)
    else:
        tmz = np.inf
        tdz = np.inf

    n = 0
    out_idx[n, 0] = ix
    out_idx[n, 1] = iy
    out_idx[n, 2] = iz
    n += 1
    guard = nx + ny + nz + 2
    while guard > 0 and not (ix == fx and iy == fy and iz == fz):
        guard -= 1
        if tmx <= tmy and tmx <= tmz:
            if tmx > t1:
                break
            ix += stepx
            if ix < 0 or ix >= nx:
                break
            tmx += tdx
        elif tmy <= tmz:
            if tmy > t1:
                break
            iy += stepy
            if iy < 0 or iy >= ny:
                break
            tmy += tdy
        else:
            if tmz > t1:
                break
            iz += stepz
            if iz < 0 or iz >= nz:
                break
            tmz += tdz
        out_idx[n, 0] = ix
        out_idx[n, 1] = iy
        out_idx[n, 2] = iz
        n += 1
    return n


@njit(cache=True, error_model="numpy")
def integrate_frame(delta, end_mark, ox, oy, oz, h,
                    sx, sy, sz, ends, occupied_end, c1, c2):
    """Accumulate one depth frame's log-odds updates into delta.

    Each ray runs from the camera (sx,sy,sz) to ends[i]. Rays flagged in
    occupied_end whose endpoint voxel lies inside the grid deposit c1 there;
    every other crossed voxel gets c2. Each ray touches a voxel at most once.
    end_mark is set for voxels that received an endpoint update this frame.
    Returns (rays that intersected the grid, distinct endpoint voxels).
    """
    nx = delta.shape[0]
    ny = delta.shape[1]
    nz = delta.shape[2]
    gx1 = ox + nx * h
    gy1 = oy + ny * h
    gz1 = oz + nz * h
    rays = 0
    endpoints = 0
    scratch = np.empty((nx + ny + nz + 3, 3), np.int64)
    for i in range(ends.shape[0]):
        ex = ends[i, 0]
        ey = ends[i, 1]
        ez = ends[i, 2]
        n = traverse_segment(ox, oy, oz, h, nx, ny, nz,
                             sx, sy, sz, ex, ey, ez, scratch)
        if n == 0:
            continue
        rays += 1
        hit_end = False
        if occupied_end[i]:
            # endpoint voxel must be inside the grid for the c1 deposit
            if ox <= ex < gx1 and oy <= ey < gy1 and oz <= ez < gz1:
                fx = int(np.floor((ex - ox) / h))
                fy = int(np.floor((ey - oy) / h))
                fz = int(np.floor((ez - oz) / h))
                last = n - 1
                if (scratch[last, 0] == fx and scratch[last, 1] == fy
                        and scratch[last, 2] == fz):
                    hit_end = True
        if hit_end:
            for k in range(n - 1):
                delta[scratch[k, 0], scratch[k, 1], scratch[k, 2]] += c2
            last = n - 1
            delta[scratch[last, 0], scratch[last, 1], scratch[last, 2]] += c1
            if not end_mark[scratch[last, 0], scratch[last, 1], scratch[last, 2]]:
                end_mark[scratch[last, 0], scratch[last, 1], scratch[last, 2]] = True
                endpoints += 1
        else:
            for k in range(n):
                delta[scratch[k, 0], scratch[k, 1], scratch[k, 2]] += c2
    return rays, endpoints


# ---------------------------------------------------------------------------
# Greedy information gain: visible-unknown-voxel counts per candidate pose

@njit(cache=True, error_model="numpy")
def _occluded(states, ox, oy, oz, h, sx, sy, sz, ex, ey, ez, occupied_code):
    """True if an Occupied voxel lies strictly between the camera and the
    target point (the target's own voxel does not block)."""
    nx = states.shape[0]
    ny = states.shape[1]
    nz = states.shape[2]
    fx = _voxel_of(ex, ox, h, nx)
    fy = _voxel_of(ey, oy, h, ny)
    fz = _voxel_of(ez, oz, h, nz)
    scratch = np.empty((nx + ny + nz + 3, 3), np.int64)
    n = traverse_segment(ox, oy, oz, h, nx, ny, nz, sx, sy, sz, ex, ey, ez,
                         scratch)
    for k in range(n):
        ix = scratch[k, 0]
        iy = scratch[k, 1]
        iz = scratch[k, 2]
        if ix == fx and iy == fy and iz == fz:
            return False
        if states[ix, iy, iz] == occupied_code:
            return True
    return False


@njit(cache=True, parallel=True, error_model="numpy")
def infogain_scores(states, ox, oy, oz, h,
                    cand_pos, cand_fwd, cand_left, cand_up,
                    tan_half_h, tan_half_v, max_range,
                    targets, occupied_code, out_scores):
    """For each candidate pose, count unknown-voxel centers that fall inside
    its frustum and are not occluded by Occupied voxels."""
    m = cand_pos.shape[0]
    k = targets.shape[0]
    max_r2 = max_range * max_range
    for c in prange(m):
        px = cand_pos[c, 0]
        py = cand_pos[c, 1]
        pz = cand_pos[c, 2]
        count = 0
        for t in range(k):
            rx = targets[t, 0] - px
            ry = targets[t, 1] - py
            rz = targets[t, 2] - pz
            f = rx * cand_fwd[c, 0] + ry * cand_fwd[c, 1] + rz * cand_fwd[c, 2]
            if f <= 0.0:
                continue
            l = rx * cand_left[c, 0] + ry * cand_left[c, 1] + rz * cand_left[c, 2]
            if abs(l) > f * tan_half_h:
                continue
            u = rx * cand_up[c, 0] + ry * cand_up[c, 1] + rz * cand_up[c, 2]
            if abs(u) > f * tan_half_v:
                continue
            if rx * rx + ry * ry + rz * rz > max_r2:
                continue
            if not _occluded(states, ox, oy, oz, h, px, py, pz,
                             targets[t, 0], targets[t, 1], targets[t, 2],
                             occupied_code):
                count += 1
        out_scores[c] = count

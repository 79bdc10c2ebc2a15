"""Median-split BVH over triangles and nearest-hit ray traversal.

Traversal kernels are plain ``njit`` functions on flat arrays so the renderers
can call them from their own compiled loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba as nb
import numpy as np

from .geometry import TriangleMesh

LEAF_SIZE = 4
STACK_SIZE = 64
_JIT = dict(cache=True, error_model="numpy")

# nodes_i columns
LEFT, RIGHT, START, COUNT, AXIS = range(5)


@nb.njit(**_JIT)
def _build(tri_min, tri_max, centroid, leaf_size):
    n = tri_min.shape[0]
    order = np.arange(n)
    max_nodes = max(1, 2 * n)
    nodes_f = np.empty((max_nodes, 6))
    nodes_i = np.full((max_nodes, 5), -1, dtype=np.int64)
    stack = np.empty((max_nodes, 3), dtype=np.int64)
    sp = 0
    stack[0, 0], stack[0, 1], stack[0, 2] = 0, 0, n
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node, start, end = stack[sp, 0], stack[sp, 1], stack[sp, 2]
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for k in range(start, end):
            t = order[k]
            for a in range(3):
                lo[a] = min(lo[a], tri_min[t, a])
                hi[a] = max(hi[a], tri_max[t, a])
                clo[a] = min(clo[a], centroid[t, a])
                chi[a] = max(chi[a], centroid[t, a])
        for a in range(3):
            nodes_f[node, a] = lo[a]
            nodes_f[node, 3 + a] = hi[a]
        count = end - start
        if count <= leaf_size:
            nodes_i[node, START] = start
            nodes_i[node, COUNT] = count
            continue
        axis = 0
        for a in range(1, 3):
            if chi[a] - clo[a] > chi[axis] - clo[axis]:
                axis = a
        keys = np.empty(count)
        for k in range(count):
            keys[k] = centroid[order[start + k], axis]
        perm = np.argsort(keys, kind="mergesort")
        seg = order[start:end].copy()
        for k in range(count):
            order[start + k] = seg[perm[k]]
        mid = (start + end) // 2
        left, right = n_nodes, n_nodes + 1
        n_nodes += 2
        nodes_i[node, LEFT] = left
        nodes_i[node, RIGHT] = right
        nodes_i[node, AXIS] = axis
        stack[sp, 0], stack[sp, 1], stack[sp, 2] = right, mid, end
        sp += 1
        stack[sp, 0], stack[sp, 1], stack[sp, 2] = left, start, mid
        sp += 1
    return nodes_f[:n_nodes].copy(), nodes_i[:n_nodes].copy(), order


@nb.njit(inline="always", **_JIT)
def intersect_triangle(ox, oy, oz, dx, dy, dz, tv, j, tmin):
    """Möller–Trumbore against packed triangle row ``tv[j]`` -> (t, u, v); t = inf on miss."""
    ax, ay, az = tv[j, 0], tv[j, 1], tv[j, 2]
    e1x, e1y, e1z = tv[j, 3] - ax, tv[j, 4] - ay, tv[j, 5] - az
    e2x, e2y, e2z = tv[j, 6] - ax, tv[j, 7] - ay, tv[j, 8] - az
    px, py, pz = dy * e2z - dz * e2y, dz * e2x - dx * e2z, dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    sx, sy, sz = ox - ax, oy - ay, oz - az
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf, 0.0, 0.0
    qx, qy, qz = sy * e1z - sz * e1y, sz * e1x - sx * e1z, sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= tmin:
        return np.inf, 0.0, 0.0
    return t, u, v


@nb.njit(inline="always", **_JIT)
def _safe_inv(d):
    if d == 0.0:
        return 1e300
    return 1.0 / d


@nb.njit(inline="always", **_JIT)
def _slab(nf, node, ox, oy, oz, ix, iy, iz, tmax):
    t0 = (nf[node, 0] - ox) * ix
    t1 = (nf[node, 3] - ox) * ix
    tn, tf = min(t0, t1), max(t0, t1)
    t0 = (nf[node, 1] - oy) * iy
    t1 = (nf[node, 4] - oy) * iy
    tn, tf = max(tn, min(t0, t1)), min(tf, max(t0, t1))
    t0 = (nf[node, 2] - oz) * iz
    t1 = (nf[node, 5] - oz) * iz
    tn, tf = max(tn, min(t0, t1)), min(tf, max(t0, t1))
    return tn <= tf and tf >= 0.0 and tn <= tmax


@nb.njit(**_JIT)
def trace_nearest(ox, oy, oz, dx, dy, dz, tmin, tmax, nf, ni, tv, tid):
    """Nearest hit -> (t, triangle id, u, v); triangle id -1 on miss. Equal distances go to the lower id."""
    return trace_nearest_buf(ox, oy, oz, dx, dy, dz, tmin, tmax, nf, ni, tv, tid, np.empty(STACK_SIZE, dtype=np.int64))


@nb.njit(**_JIT)
def trace_nearest_buf(ox, oy, oz, dx, dy, dz, tmin, tmax, nf, ni, tv, tid, stack):
    """trace_nearest with a caller-owned traversal stack (saves an allocation per ray in hot loops)."""
    ix, iy, iz = _safe_inv(dx), _safe_inv(dy), _safe_inv(dz)
    stack[0] = 0
    sp = 1
    best_t, best_id, best_u, best_v = tmax, -1, 0.0, 0.0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _slab(nf, node, ox, oy, oz, ix, iy, iz, best_t):
            continue
        left = ni[node, 0]
        if left < 0:
            s = ni[node, 2]
            for j in range(s, s + ni[node, 3]):
                t, u, v = intersect_triangle(ox, oy, oz, dx, dy, dz, tv, j, tmin)
                if t < best_t or (t == best_t and best_id >= 0 and tid[j] < best_id):
                    best_t, best_id, best_u, best_v = t, tid[j], u, v
        else:
            axis = ni[node, 4]
            d = dx if axis == 0 else (dy if axis == 1 else dz)
            right = ni[node, 1]
            if d >= 0.0:
                stack[sp] = right
                stack[sp + 1] = left
            else:
                stack[sp] = left
                stack[sp + 1] = right
            sp += 2
    if best_id < 0:
        return np.inf, -1, 0.0, 0.0
    return best_t, best_id, best_u, best_v


@nb.njit(**_JIT)
def trace_occluded(ox, oy, oz, dx, dy, dz, tmin, tmax, nf, ni, tv):
    """True if any triangle is hit with tmin < t < tmax."""
    return trace_occluded_buf(ox, oy, oz, dx, dy, dz, tmin, tmax, nf, ni, tv, np.empty(STACK_SIZE, dtype=np.int64))


@nb.njit(**_JIT)
def trace_occluded_buf(ox, oy, oz, dx, dy, dz, tmin, tmax, nf, ni, tv, stack):
    ix, iy, iz = _safe_inv(dx), _safe_inv(dy), _safe_inv(dz)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _slab(nf, node, ox, oy, oz, ix, iy, iz, tmax):
            continue
        left = ni[node, 0]
        if left < 0:
            s = ni[node, 2]
            for j in range(s, s + ni[node, 3]):
                t, u, v = intersect_triangle(ox, oy, oz, dx, dy, dz, tv, j, tmin)
                if t < tmax:
                    return True
        else:
            stack[sp] = ni[node, 1]
            stack[sp + 1] = left
            sp += 2
    return False


@nb.njit(**_JIT)
def _trace_many(origins, dirs, tmin, nf, ni, tv, tid):
    n = origins.shape[0]
    t_out = np.empty(n)
    id_out = np.empty(n, dtype=np.int64)
    uv_out = np.empty((n, 2))
    for i in range(n):
        t, j, u, v = trace_nearest(origins[i, 0], origins[i, 1], origins[i, 2],
                                   dirs[i, 0], dirs[i, 1], dirs[i, 2], tmin, np.inf, nf, ni, tv, tid)
        t_out[i], id_out[i] = t, j
        uv_out[i, 0], uv_out[i, 1] = u, v
    return t_out, id_out, uv_out


@dataclass(frozen=True)
class Hit:
    distance: float
    triangle: int  # index into the concatenated triangle list
    barycentric: tuple[float, float, float]
    instance: int


@dataclass(frozen=True)
class Bvh:
    nodes_f: np.ndarray  # (N, 6) node bounds: min xyz, max xyz
    nodes_i: np.ndarray  # (N, 5) left, right, start, count, split axis
    tri_verts: np.ndarray  # (F, 9) triangle corners in leaf order
    tri_ids: np.ndarray  # (F,) original triangle id per leaf slot
    vertices: np.ndarray  # concatenated scene vertices
    triangles: np.ndarray  # concatenated triangles (global vertex indices)
    normals: np.ndarray
    tri_mesh: np.ndarray  # (F,) source mesh index per triangle
    tri_instance: np.ndarray  # (F,) instance id per triangle

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.nodes_f[0, :3], self.nodes_f[0, 3:]

    def leaves(self):
        for k in range(len(self.nodes_i)):
            if self.nodes_i[k, LEFT] < 0:
                s, c = self.nodes_i[k, START], self.nodes_i[k, COUNT]
                yield k, self.tri_ids[s:s + c]

    def intersect(self, origin, direction, tmin: float = 1e-9) -> Hit | None:
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(direction, dtype=np.float64)
        if not np.any(d):
            raise ValueError("ray direction must be non-zero")
        t, j, u, v = trace_nearest(o[0], o[1], o[2], d[0], d[1], d[2], tmin, np.inf,
                                   self.nodes_f, self.nodes_i, self.tri_verts, self.tri_ids)
        if j < 0:
            return None
        return Hit(float(t), int(j), (1.0 - u - v, float(u), float(v)), int(self.tri_instance[j]))

    def intersect_many(self, origins, directions, tmin: float = 1e-9):
        """Vectorized nearest hit: returns (distance, triangle id or -1, (u, v))."""
        o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        d = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
        return _trace_many(o, d, tmin, self.nodes_f, self.nodes_i, self.tri_verts, self.tri_ids)


def build_bvh(meshes: Sequence[TriangleMesh], instance_ids: Sequence[int] | None = None,
              leaf_size: int = LEAF_SIZE) -> Bvh:
    """Build a BVH over already-transformed meshes. Instance ids default to 1..len(meshes)."""
    meshes = list(meshes)
    if instance_ids is None:
        instance_ids = range(1, len(meshes) + 1)
    instance_ids = list(instance_ids)
    if len(instance_ids) != len(meshes):
        raise ValueError("one instance id per mesh required")
    if sum(m.n_triangles for m in meshes) == 0:
        raise ValueError("empty scene: no triangles to build a BVH over")

    verts, tris, norms, tri_mesh, tri_inst = [], [], [], [], []
    offset = 0
    for k, (m, iid) in enumerate(zip(meshes, instance_ids)):
        verts.append(m.vertices)
        norms.append(m.normals)
        tris.append(m.triangles + offset)
        tri_mesh.append(np.full(m.n_triangles, k, dtype=np.int64))
        tri_inst.append(np.full(m.n_triangles, iid, dtype=np.int64))
        offset += m.n_vertices
    v = np.concatenate(verts)
    f = np.concatenate(tris)
    corners = v[f]  # (F, 3, 3)
    tri_min = corners.min(axis=1)
    tri_max = corners.max(axis=1)
    centroid = corners.mean(axis=1)
    nodes_f, nodes_i, order = _build(tri_min, tri_max, centroid, leaf_size)
    tri_verts = np.ascontiguousarray(corners[order].reshape(-1, 9))
    return Bvh(nodes_f, nodes_i, tri_verts, order.astype(np.int64), v, f,
               np.concatenate(norms), np.concatenate(tri_mesh), np.concatenate(tri_inst))


def ray_intersect(bvh: Bvh, origin, direction) -> Hit | None:
    return bvh.intersect(origin, direction)

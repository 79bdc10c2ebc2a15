"""Z-buffer rasterizer: fast preview shading and the per-pixel instance id pass.

Projection matches the path tracer's camera rays, so a pixel center here sees
the same nearest surface a center ray would.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from ..sampler import CameraSpec
from .scene import RenderScene, RenderSettings, camera_frame, resolve_material, surface_frame

_JIT = dict(cache=True, error_model="numpy")
NEAR = 1e-4


@nb.njit(inline="always", **_JIT)
def _to_view(cam, x, y, z):
    px, py, pz = x - cam[0], y - cam[1], z - cam[2]
    return (px * cam[6] + py * cam[7] + pz * cam[8],
            px * cam[9] + py * cam[10] + pz * cam[11],
            px * cam[3] + py * cam[4] + pz * cam[5])


@nb.njit(**_JIT)
def _visibility(cam, width, height, faces, verts):
    """Nearest triangle and its barycentrics per pixel center (-1 where empty)."""
    zbuf = np.full((height, width), np.inf)
    ids = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 2))
    tx, ty = cam[12], cam[13]
    # clipped polygon: view position + barycentric weights of the source triangle, at most 4 corners
    poly = np.empty((4, 6))
    src = np.empty((3, 6))
    sx = np.empty(4)
    sy = np.empty(4)
    iz = np.empty(4)
    for f in range(faces.shape[0]):
        nin = 0
        for c in range(3):
            vi = faces[f, c]
            xv, yv, zv = _to_view(cam, verts[vi, 0], verts[vi, 1], verts[vi, 2])
            src[c, 0], src[c, 1], src[c, 2] = xv, yv, zv
            src[c, 3] = 1.0 if c == 0 else 0.0
            src[c, 4] = 1.0 if c == 1 else 0.0
            src[c, 5] = 1.0 if c == 2 else 0.0
            if zv > NEAR:
                nin += 1
        if nin == 0:
            continue
        n = 0
        for c in range(3):
            a = src[c]
            b = src[(c + 1) % 3]
            a_in = a[2] > NEAR
            b_in = b[2] > NEAR
            if a_in:
                poly[n] = a
                n += 1
            if a_in != b_in:
                s = (NEAR - a[2]) / (b[2] - a[2])
                poly[n] = a + s * (b - a)
                poly[n, 2] = NEAR
                n += 1
        for c in range(n):
            z = poly[c, 2]
            sx[c] = (poly[c, 0] / (z * tx) + 1.0) * 0.5 * width
            sy[c] = (1.0 - poly[c, 1] / (z * ty)) * 0.5 * height
            iz[c] = 1.0 / z
        for k in range(1, n - 1):
            i0, i1, i2 = 0, k, k + 1
            area = (sx[i1] - sx[i0]) * (sy[i2] - sy[i0]) - (sx[i2] - sx[i0]) * (sy[i1] - sy[i0])
            if area == 0.0 or not math.isfinite(area):
                continue
            x0 = max(int(math.floor(min(sx[i0], sx[i1], sx[i2]) - 0.5)), 0)
            x1 = min(int(math.ceil(max(sx[i0], sx[i1], sx[i2]) - 0.5)), width - 1)
            y0 = max(int(math.floor(min(sy[i0], sy[i1], sy[i2]) - 0.5)), 0)
            y1 = min(int(math.ceil(max(sy[i0], sy[i1], sy[i2]) - 0.5)), height - 1)
            inv_area = 1.0 / area
            for py in range(y0, y1 + 1):
                cy = py + 0.5
                for px in range(x0, x1 + 1):
                    cx = px + 0.5
                    l0 = ((sx[i1] - cx) * (sy[i2] - cy) - (sx[i2] - cx) * (sy[i1] - cy)) * inv_area
                    l1 = ((sx[i2] - cx) * (sy[i0] - cy) - (sx[i0] - cx) * (sy[i2] - cy)) * inv_area
                    l2 = 1.0 - l0 - l1
                    if l0 < 0.0 or l1 < 0.0 or l2 < 0.0:
                        continue
                    w0, w1, w2 = l0 * iz[i0], l1 * iz[i1], l2 * iz[i2]
                    wsum = w0 + w1 + w2
                    z = 1.0 / wsum
                    if z < zbuf[py, px] or (z == zbuf[py, px] and f < ids[py, px]):
                        zbuf[py, px] = z
                        ids[py, px] = f
                        w0, w1, w2 = w0 * z, w1 * z, w2 * z
                        bary[py, px, 0] = w0 * poly[i0, 4] + w1 * poly[i1, 4] + w2 * poly[i2, 4]
                        bary[py, px, 1] = w0 * poly[i0, 5] + w1 * poly[i1, 5] + w2 * poly[i2, 5]
    return ids, bary


@nb.njit(parallel=True, **_JIT)
def _shade(cam, ids, bary, faces, verts, normals, tri_mat, mat_f, mat_i, tex_data, tex_meta,
           lights, light_power, env):
    height, width = ids.shape
    out = np.zeros((height, width, 3))
    for y in nb.prange(height):
        for x in range(width):
            tri = ids[y, x]
            if tri < 0:
                out[y, x, 0], out[y, x, 1], out[y, x, 2] = env[0], env[1], env[2]
                continue
            u, v = bary[y, x, 0], bary[y, x, 1]
            dx, dy, dz = 0.0, 0.0, 0.0
            i0, i1, i2 = faces[tri, 0], faces[tri, 1], faces[tri, 2]
            w = 1.0 - u - v
            for c in range(3):
                p = w * verts[i0, c] + u * verts[i1, c] + v * verts[i2, c] - cam[c]
                if c == 0:
                    dx = p
                elif c == 1:
                    dy = p
                else:
                    dz = p
            p, ng, ns = surface_frame(tri, u, v, dx, dy, dz, verts, faces, normals)
            albedo, metal, rough, spec = resolve_material(tri_mat[tri], p[0], p[1], p[2], ns[0], ns[1], ns[2],
                                                          mat_f, mat_i, tex_data, tex_meta)
            vn = math.sqrt(dx * dx + dy * dy + dz * dz)
            wo = (-dx / vn, -dy / vn, -dz / vn)
            shin = min(max(2.0 / max(rough, 0.02) ** 4 - 2.0, 1.0), 4096.0)
            f0 = 0.04 * spec
            kd = 1.0 - metal
            r = g = b = 0.0
            for k in range(lights.shape[0]):
                lx, ly, lz = lights[k, 0] - p[0], lights[k, 1] - p[1], lights[k, 2] - p[2]
                d2 = lx * lx + ly * ly + lz * lz
                if d2 <= 0.0:
                    continue
                d = math.sqrt(d2)
                wi = (lx / d, ly / d, lz / d)
                cos_l = -(wi[0] * lights[k, 9] + wi[1] * lights[k, 10] + wi[2] * lights[k, 11])
                cos_s = wi[0] * ns[0] + wi[1] * ns[1] + wi[2] * ns[2]
                if cos_l <= 0.0 or cos_s <= 0.0:
                    continue
                e = cos_l * cos_s / d2
                hx, hy, hz = wi[0] + wo[0], wi[1] + wo[1], wi[2] + wo[2]
                hn = math.sqrt(hx * hx + hy * hy + hz * hz)
                nh = max((hx * ns[0] + hy * ns[1] + hz * ns[2]) / hn, 0.0) if hn > 0.0 else 0.0
                sp = (shin + 8.0) / (8.0 * math.pi) * nh ** shin
                for c in range(3):
                    fc = (1.0 - metal) * f0 + metal * albedo[c]
                    val = (kd * albedo[c] / math.pi + fc * sp) * light_power[k, c] * e
                    if c == 0:
                        r += val
                    elif c == 1:
                        g += val
                    else:
                        b += val
            out[y, x, 0], out[y, x, 1], out[y, x, 2] = r, g, b
    return out


def _arrays(scene: RenderScene):
    if scene.bvh is None:
        return np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 3))
    return scene.bvh.triangles, scene.bvh.vertices, scene.bvh.normals


def visibility_buffer(scene: RenderScene, camera: CameraSpec, width: int | None = None, height: int | None = None):
    """Per-pixel triangle id (-1 for empty) and (u, v) barycentrics at pixel centers."""
    cam = camera_frame(camera, width, height)
    faces, verts, _ = _arrays(scene)
    return _visibility(cam, int(cam[14]), int(cam[15]), faces, verts)


def render_id_pass(scene: RenderScene, camera: CameraSpec, width: int | None = None,
                   height: int | None = None) -> np.ndarray:
    """Instance id per pixel at native resolution; 0 where no labeled object is visible."""
    ids, _ = visibility_buffer(scene, camera, width, height)
    out = np.zeros(ids.shape, dtype=np.int64)
    hit = ids >= 0
    out[hit] = scene.tri_instance[ids[hit]]
    return out


def render_rasterized(scene: RenderScene, camera: CameraSpec, settings: RenderSettings = RenderSettings(),
                      width: int | None = None, height: int | None = None) -> np.ndarray:
    """Linear HDR image with direct-only Lambert + Blinn-Phong shading, box-filtered from a supersampled grid."""
    w = camera.width if width is None else width
    h = camera.height if height is None else height
    ss = settings.supersample
    cam = camera_frame(camera, w * ss, h * ss)
    faces, verts, normals = _arrays(scene)
    ids, bary = _visibility(cam, w * ss, h * ss, faces, verts)
    hi = _shade(cam, ids, bary, faces, verts, normals, scene.tri_material, scene.mat_f, scene.mat_i,
                scene.tex_data, scene.tex_meta, scene.lights, scene.light_power, scene.environment.astype(np.float64))
    return hi.reshape(h, ss, w, ss, 3).mean(axis=(1, 3))

"""Unidirectional path tracer with next-event estimation and MIS.

Area lights are one-sided rectangles that only contribute light: camera rays
pass through them and they cast no shadows of their own.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from ..bvh import STACK_SIZE, trace_nearest_buf, trace_occluded_buf
from ..material import brdf_eval, brdf_pdf, brdf_sample
from ..sampler import CameraSpec
from .rng import sample_key, uniform
from .scene import RenderScene, RenderSettings, camera_frame, camera_ray, resolve_material, surface_frame

_JIT = dict(cache=True, error_model="numpy")
_CLAMP = 1e4  # per-sample radiance ceiling against fireflies


@nb.njit(inline="always", **_JIT)
def _hit_light(lights, k, ox, oy, oz, dx, dy, dz):
    """Distance to light k along the ray (front face only), inf if missed."""
    nx, ny, nz = lights[k, 9], lights[k, 10], lights[k, 11]
    dn = dx * nx + dy * ny + dz * nz
    if dn >= 0.0:
        return np.inf
    t = ((lights[k, 0] - ox) * nx + (lights[k, 1] - oy) * ny + (lights[k, 2] - oz) * nz) / dn
    if t <= 0.0:
        return np.inf
    qx, qy, qz = ox + t * dx - lights[k, 0], oy + t * dy - lights[k, 1], oz + t * dz - lights[k, 2]
    for a in (3, 6):
        ax, ay, az = lights[k, a], lights[k, a + 1], lights[k, a + 2]
        e2 = ax * ax + ay * ay + az * az
        if abs(qx * ax + qy * ay + qz * az) > e2:
            return np.inf
    return t


@nb.njit(**_JIT)
def _radiance(ox, oy, oz, dx, dy, dz, key, nf, ni, tv, tid, faces, verts, normals, tri_mat, mat_f, mat_i,
              tex_data, tex_meta, lights, env, max_depth, rr_depth, eps, stack):
    lr = lg = lb = 0.0
    br = bg = bb = 1.0
    n_lights = lights.shape[0]
    prev_pdf = 0.0
    ctr = 0
    has_geo = nf.shape[0] > 0
    for depth in range(max_depth + 1):
        t_geo, tri, u, v = np.inf, -1, 0.0, 0.0
        if has_geo:
            t_geo, tri, u, v = trace_nearest_buf(ox, oy, oz, dx, dy, dz, 0.0, np.inf, nf, ni, tv, tid, stack)
        # emitters crossed before the surface; camera rays do not see lights
        if depth > 0:
            for k in range(n_lights):
                tl = _hit_light(lights, k, ox, oy, oz, dx, dy, dz)
                if tl < t_geo:
                    cos_l = -(dx * lights[k, 9] + dy * lights[k, 10] + dz * lights[k, 11])
                    p_light = tl * tl / (cos_l * lights[k, 15] * n_lights)
                    w = prev_pdf * prev_pdf / (prev_pdf * prev_pdf + p_light * p_light)
                    lr += br * lights[k, 12] * w
                    lg += bg * lights[k, 13] * w
                    lb += bb * lights[k, 14] * w
        if tri < 0:
            lr += br * env[0]
            lg += bg * env[1]
            lb += bb * env[2]
            break
        if depth == max_depth:
            break
        p, ng, ns = surface_frame(tri, u, v, dx, dy, dz, verts, faces, normals)
        albedo, metal, rough, spec = resolve_material(tri_mat[tri], p[0], p[1], p[2], ns[0], ns[1], ns[2],
                                                      mat_f, mat_i, tex_data, tex_meta)
        wo = (-dx, -dy, -dz)
        sox, soy, soz = p[0] + eps * ng[0], p[1] + eps * ng[1], p[2] + eps * ng[2]

        # next-event estimation on one uniformly chosen light
        if n_lights > 0:
            k = min(int(uniform(key, ctr) * n_lights), n_lights - 1)
            s1 = 2.0 * uniform(key, ctr + 1) - 1.0
            s2 = 2.0 * uniform(key, ctr + 2) - 1.0
            qx = lights[k, 0] + s1 * lights[k, 3] + s2 * lights[k, 6]
            qy = lights[k, 1] + s1 * lights[k, 4] + s2 * lights[k, 7]
            qz = lights[k, 2] + s1 * lights[k, 5] + s2 * lights[k, 8]
            lx, ly, lz = qx - sox, qy - soy, qz - soz
            dist = math.sqrt(lx * lx + ly * ly + lz * lz)
            if dist > 0.0:
                wi = (lx / dist, ly / dist, lz / dist)
                cos_l = -(wi[0] * lights[k, 9] + wi[1] * lights[k, 10] + wi[2] * lights[k, 11])
                cos_g = wi[0] * ng[0] + wi[1] * ng[1] + wi[2] * ng[2]
                cos_s = wi[0] * ns[0] + wi[1] * ns[1] + wi[2] * ns[2]
                if cos_l > 0.0 and cos_g > 0.0 and cos_s > 0.0:
                    f = brdf_eval(albedo, metal, rough, spec, ns, wi, wo)
                    if f[0] + f[1] + f[2] > 0.0:
                        occluded = False
                        if has_geo:
                            occluded = trace_occluded_buf(sox, soy, soz, wi[0], wi[1], wi[2], 0.0, dist, nf, ni, tv,
                                                          stack)
                        if not occluded:
                            p_light = dist * dist / (cos_l * lights[k, 15] * n_lights)
                            p_brdf = brdf_pdf(albedo, metal, rough, spec, ns, wi, wo)
                            w = p_light * p_light / (p_light * p_light + p_brdf * p_brdf) / p_light * cos_s
                            lr += br * f[0] * lights[k, 12] * w
                            lg += bg * f[1] * lights[k, 13] * w
                            lb += bb * f[2] * lights[k, 14] * w
        ctr += 3

        # continue the path by sampling the BRDF
        wi, pdf = brdf_sample(albedo, metal, rough, spec, ns, wo,
                              uniform(key, ctr), uniform(key, ctr + 1), uniform(key, ctr + 2))
        ctr += 3
        if pdf <= 0.0:
            break
        cos_g = wi[0] * ng[0] + wi[1] * ng[1] + wi[2] * ng[2]
        if cos_g <= 0.0:
            break
        f = brdf_eval(albedo, metal, rough, spec, ns, wi, wo)
        c = (wi[0] * ns[0] + wi[1] * ns[1] + wi[2] * ns[2]) / pdf
        br *= f[0] * c
        bg *= f[1] * c
        bb *= f[2] * c
        if br + bg + bb <= 0.0:
            break
        prev_pdf = pdf
        if depth + 1 >= rr_depth:
            q = min(max(br, bg, bb), 0.95)
            if uniform(key, ctr) >= q:
                break
            br /= q
            bg /= q
            bb /= q
        ctr += 1
        ox, oy, oz = sox, soy, soz
        dx, dy, dz = wi
    return lr, lg, lb


@nb.njit(parallel=True, **_JIT)
def _render_kernel(cam, width, height, spp, seed, image, nf, ni, tv, tid, faces, verts, normals, tri_mat,
                   mat_f, mat_i, tex_data, tex_meta, lights, env, max_depth, rr_depth, eps):
    out = np.zeros((height, width, 3))
    bad = np.zeros(height, dtype=np.int64)
    ox, oy, oz = cam[0], cam[1], cam[2]
    for y in nb.prange(height):
        stack = np.empty(STACK_SIZE, dtype=np.int64)
        for x in range(width):
            ar = ag = ab = 0.0
            for s in range(spp):
                key = sample_key(seed, image, x, y, s)
                fx = x + uniform(key, 1000003)
                fy = y + uniform(key, 1000004)
                dx, dy, dz = camera_ray(cam, fx, fy)
                r, g, b = _radiance(ox, oy, oz, dx, dy, dz, key, nf, ni, tv, tid, faces, verts, normals,
                                    tri_mat, mat_f, mat_i, tex_data, tex_meta, lights, env,
                                    max_depth, rr_depth, eps, stack)
                if not (math.isfinite(r) and math.isfinite(g) and math.isfinite(b)):
                    bad[y] += 1
                    continue
                if r < 0.0 or g < 0.0 or b < 0.0 or max(r, g, b) > _CLAMP:
                    bad[y] += 1
                ar += min(max(r, 0.0), _CLAMP)
                ag += min(max(g, 0.0), _CLAMP)
                ab += min(max(b, 0.0), _CLAMP)
            out[y, x, 0] = ar / spp
            out[y, x, 1] = ag / spp
            out[y, x, 2] = ab / spp
    return out, bad.sum()


def _geometry_arrays(scene: RenderScene):
    if scene.bvh is None:
        return (np.zeros((0, 6)), np.zeros((0, 5), dtype=np.int64), np.zeros((0, 9)), np.zeros(0, dtype=np.int64),
                np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 3)))
    b = scene.bvh
    return b.nodes_f, b.nodes_i, b.tri_verts, b.tri_ids, b.triangles, b.vertices, b.normals


def render_pathtraced(scene: RenderScene, camera: CameraSpec, settings: RenderSettings = RenderSettings(),
                      width: int | None = None, height: int | None = None) -> tuple[np.ndarray, int]:
    """Linear HDR image (H, W, 3) and the count of clamped or non-finite samples."""
    cam = camera_frame(camera, width, height)
    w, h = int(cam[14]), int(cam[15])
    nf, ni, tv, tid, faces, verts, normals = _geometry_arrays(scene)
    eps = 1e-6 * max(scene.scene_scale, 1e-3)
    img, bad = _render_kernel(cam, w, h, settings.spp, settings.seed & 0xFFFFFFFF, settings.image_index & 0xFFFFFFFF,
                              nf, ni, tv, tid, faces, verts, normals, scene.tri_material, scene.mat_f, scene.mat_i,
                              scene.tex_data, scene.tex_meta, scene.lights, scene.environment.astype(np.float64),
                              settings.max_depth, settings.rr_depth, eps)
    return img, int(bad)


@nb.njit(parallel=True, **_JIT)
def _primary_kernel(cam, width, height, nf, ni, tv, tid):
    out = np.full((height, width), -1, dtype=np.int64)
    for y in nb.prange(height):
        stack = np.empty(STACK_SIZE, dtype=np.int64)
        for x in range(width):
            dx, dy, dz = camera_ray(cam, x + 0.5, y + 0.5)
            _, tri, _, _ = trace_nearest_buf(cam[0], cam[1], cam[2], dx, dy, dz, 0.0, np.inf, nf, ni, tv, tid, stack)
            out[y, x] = tri
    return out


def primary_visibility_ids(scene: RenderScene, camera: CameraSpec, width: int | None = None,
                           height: int | None = None) -> np.ndarray:
    """Instance id seen by one ray through each pixel center (the path tracer's first hit)."""
    cam = camera_frame(camera, width, height)
    w, h = int(cam[14]), int(cam[15])
    if scene.bvh is None:
        return np.zeros((h, w), dtype=np.int64)
    b = scene.bvh
    tris = _primary_kernel(cam, w, h, b.nodes_f, b.nodes_i, b.tri_verts, b.tri_ids)
    out = np.zeros((h, w), dtype=np.int64)
    hit = tris >= 0
    out[hit] = scene.tri_instance[tris[hit]]
    return out

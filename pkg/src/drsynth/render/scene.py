"""Flatten a scene (meshes, materials, lights, camera) into the arrays the kernels consume."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from ..bvh import Bvh, build_bvh
from ..geometry import TriangleMesh
from ..material import MaterialSpec, TextureImage, load_texture, pack_textures, tex_triplanar
from ..primitives import quad
from ..sampler import AreaLight, CameraSpec, SceneBox, SceneLayout

_JIT = dict(cache=True, error_model="numpy")

# mat_f columns: albedo rgb, metalness, roughness, specular, tiling
# mat_i columns: albedo texture, metalness texture, roughness texture (-1 = constant)


@dataclass(frozen=True)
class RenderSettings:
    backend: str = "path_traced"
    spp: int = 64
    max_depth: int = 6
    rr_depth: int = 3
    exposure: float = 1.0
    seed: int = 0
    image_index: int = 0
    supersample: int = 2

    def __post_init__(self):
        if self.backend not in ("path_traced", "rasterized"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.spp < 1 or self.max_depth < 1 or self.rr_depth < 1 or self.supersample < 1:
            raise ValueError("spp, max_depth, rr_depth and supersample must be >= 1")


@dataclass
class RenderScene:
    bvh: Bvh | None
    tri_material: np.ndarray  # (F,) material row per triangle
    tri_instance: np.ndarray  # (F,) id written to the id pass (0 for non-targets)
    mat_f: np.ndarray
    mat_i: np.ndarray
    tex_data: np.ndarray
    tex_meta: np.ndarray
    lights: np.ndarray  # (L, 16) center, U, V (half-extent scaled axes), normal, radiance, area
    light_power: np.ndarray  # (L, 4) radiant intensity rgb (power * color / pi), power
    environment: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scene_scale: float = 1.0

    @property
    def n_triangles(self) -> int:
        return 0 if self.bvh is None else self.bvh.n_triangles


def _material_rows(materials: Sequence[MaterialSpec]):
    textures: list[TextureImage] = []
    index: dict[tuple[str, bool], int] = {}

    def tex(path, srgb=True):
        if path is None:
            return -1
        key = (str(path), srgb)
        if key not in index:
            index[key] = len(textures)
            textures.append(load_texture(str(path), srgb))
        return index[key]

    mat_f = np.zeros((max(1, len(materials)), 7))
    mat_i = np.full((max(1, len(materials)), 3), -1, dtype=np.int64)
    for k, m in enumerate(materials):
        if m.mode == "solid":
            albedo = m.color
        elif m.mode == "image":
            albedo = (0.0, 0.0, 0.0)
            mat_i[k, 0] = tex(m.image)
        else:
            albedo = m.albedo if m.albedo is not None else (0.0, 0.0, 0.0)
            mat_i[k, 0] = tex(m.albedo_map)
            mat_i[k, 1] = tex(m.metalness_map, srgb=False)
            mat_i[k, 2] = tex(m.roughness_map, srgb=False)
        mat_f[k] = (*albedo, m.base_metalness, m.base_roughness, m.specular, m.tiling)
    data, meta = pack_textures(textures)
    return mat_f, mat_i, data, meta


def _light_rows(lights: Sequence[AreaLight]):
    rows = np.zeros((len(lights), 16))
    power = np.zeros((len(lights), 4))
    for k, l in enumerate(lights):
        u, v = l.axes()
        rows[k, 0:3] = l.center
        rows[k, 3:6] = u * l.half_extents[0]
        rows[k, 6:9] = v * l.half_extents[1]
        rows[k, 9:12] = l.normal
        rows[k, 12:15] = l.radiance()
        rows[k, 15] = l.area
        power[k, 0:3] = np.asarray(l.color) * l.power / math.pi
        power[k, 3] = l.power
    return rows, power


def box_meshes(box: SceneBox) -> list[TriangleMesh]:
    """Ground (z = 0, facing up) and four inward-facing walls."""
    h = box.side / 2
    cx, cy = box.center
    x0, x1, y0, y1, z1 = cx - h, cx + h, cy - h, cy + h, box.wall_height
    return [
        quad([(x0, y0, 0), (x1, y0, 0), (x1, y1, 0), (x0, y1, 0)]),
        quad([(x0, y0, 0), (x0, y0, z1), (x1, y0, z1), (x1, y0, 0)]),
        quad([(x1, y1, 0), (x1, y1, z1), (x0, y1, z1), (x0, y1, 0)]),
        quad([(x0, y1, 0), (x0, y1, z1), (x0, y0, z1), (x0, y0, 0)]),
        quad([(x1, y0, 0), (x1, y0, z1), (x1, y1, z1), (x1, y1, 0)]),
    ]


def compile_scene(meshes: Sequence[TriangleMesh], materials: Sequence[MaterialSpec], mesh_material: Sequence[int],
                  mesh_ids: Sequence[int], lights: Sequence[AreaLight] = (), environment=(0.0, 0.0, 0.0)) -> RenderScene:
    """Generic scene assembly; ``mesh_ids`` are the values the id pass writes (0 = unlabeled)."""
    meshes = list(meshes)
    mat_f, mat_i, data, meta = _material_rows(materials)
    light_rows, light_power = _light_rows(lights)
    if meshes:
        bvh = build_bvh(meshes, instance_ids=list(mesh_ids))
        tri_material = np.asarray(mesh_material, dtype=np.int64)[bvh.tri_mesh]
        tri_instance = bvh.tri_instance.astype(np.int64)
        lo, hi = bvh.bounds
        scale = float(np.linalg.norm(hi - lo)) or 1.0
    else:
        bvh = None
        tri_material = np.zeros(0, dtype=np.int64)
        tri_instance = np.zeros(0, dtype=np.int64)
        scale = 1.0
    return RenderScene(bvh, tri_material, tri_instance, mat_f, mat_i, data, meta, light_rows, light_power,
                       np.asarray(environment, dtype=np.float64), scale)


def scene_from_layout(layout: SceneLayout, environment=(0.0, 0.0, 0.0)) -> RenderScene:
    meshes, materials, mesh_mat, ids = [], [], [], []
    for inst in layout.targets:
        meshes.append(inst.mesh)
        mesh_mat.append(len(materials))
        materials.append(inst.material)
        ids.append(inst.instance_id)
    for inst in layout.distractors:
        meshes.append(inst.mesh)
        mesh_mat.append(len(materials))
        materials.append(inst.material)
        ids.append(0)
    bg = len(materials)
    materials.append(layout.background)
    for m in box_meshes(layout.box):
        meshes.append(m)
        mesh_mat.append(bg)
        ids.append(0)
    return compile_scene(meshes, materials, mesh_mat, ids, layout.lights, environment)


def camera_frame(camera: CameraSpec, width: int | None = None, height: int | None = None) -> np.ndarray:
    """Pinhole camera packed as [pos(3), fwd(3), right(3), up(3), tan_half_fov_x, tan_half_fov_y, W, H]."""
    w = camera.width if width is None else width
    h = camera.height if height is None else height
    fwd, right, up = camera.basis()
    tx = math.tan(camera.fov / 2.0)
    ty = tx * h / w
    return np.concatenate([np.asarray(camera.position, dtype=np.float64), fwd, right, up, [tx, ty, w, h]])


# --------------------------------------------------------------------------- shared kernels


@nb.njit(inline="always", **_JIT)
def camera_ray(cam, fx, fy):
    """Direction through film position (fx, fy) in pixel units (x right, y down)."""
    w, h = cam[14], cam[15]
    sx = (2.0 * fx / w - 1.0) * cam[12]
    sy = (1.0 - 2.0 * fy / h) * cam[13]
    dx = cam[3] + sx * cam[6] + sy * cam[9]
    dy = cam[4] + sx * cam[7] + sy * cam[10]
    dz = cam[5] + sx * cam[8] + sy * cam[11]
    n = math.sqrt(dx * dx + dy * dy + dz * dz)
    return dx / n, dy / n, dz / n


@nb.njit(**_JIT)
def resolve_material(m, px, py, pz, nx, ny, nz, mat_f, mat_i, tex_data, tex_meta):
    """Material parameters at a surface point -> (albedo, metalness, roughness, specular)."""
    tiling = mat_f[m, 6]
    ta = mat_i[m, 0]
    if ta >= 0:
        albedo = tex_triplanar(tex_data, tex_meta, ta, ta, ta, px, py, pz, nx, ny, nz, tiling)
    else:
        albedo = (mat_f[m, 0], mat_f[m, 1], mat_f[m, 2])
    metal = mat_f[m, 3]
    tm = mat_i[m, 1]
    if tm >= 0:
        metal = tex_triplanar(tex_data, tex_meta, tm, tm, tm, px, py, pz, nx, ny, nz, tiling)[0]
    rough = mat_f[m, 4]
    tr = mat_i[m, 2]
    if tr >= 0:
        rough = max(0.02, tex_triplanar(tex_data, tex_meta, tr, tr, tr, px, py, pz, nx, ny, nz, tiling)[0])
    return albedo, metal, rough, mat_f[m, 5]


@nb.njit(**_JIT)
def surface_frame(tri, u, v, dx, dy, dz, verts, faces, normals):
    """Hit point, geometric and shading normals, both facing against the incoming direction."""
    i0, i1, i2 = faces[tri, 0], faces[tri, 1], faces[tri, 2]
    w = 1.0 - u - v
    px = w * verts[i0, 0] + u * verts[i1, 0] + v * verts[i2, 0]
    py = w * verts[i0, 1] + u * verts[i1, 1] + v * verts[i2, 1]
    pz = w * verts[i0, 2] + u * verts[i1, 2] + v * verts[i2, 2]
    e1x, e1y, e1z = verts[i1, 0] - verts[i0, 0], verts[i1, 1] - verts[i0, 1], verts[i1, 2] - verts[i0, 2]
    e2x, e2y, e2z = verts[i2, 0] - verts[i0, 0], verts[i2, 1] - verts[i0, 1], verts[i2, 2] - verts[i0, 2]
    gx, gy, gz = e1y * e2z - e1z * e2y, e1z * e2x - e1x * e2z, e1x * e2y - e1y * e2x
    gn = math.sqrt(gx * gx + gy * gy + gz * gz)
    gx, gy, gz = gx / gn, gy / gn, gz / gn
    sx = w * normals[i0, 0] + u * normals[i1, 0] + v * normals[i2, 0]
    sy = w * normals[i0, 1] + u * normals[i1, 1] + v * normals[i2, 1]
    sz = w * normals[i0, 2] + u * normals[i1, 2] + v * normals[i2, 2]
    sn = math.sqrt(sx * sx + sy * sy + sz * sz)
    if sn > 0.0:
        sx, sy, sz = sx / sn, sy / sn, sz / sn
    else:
        sx, sy, sz = gx, gy, gz
    if gx * dx + gy * dy + gz * dz > 0.0:
        gx, gy, gz = -gx, -gy, -gz
    if sx * dx + sy * dy + sz * dz > 0.0:
        sx, sy, sz = -sx, -sy, -sz
    if sx * gx + sy * gy + sz * gz <= 0.0:
        sx, sy, sz = gx, gy, gz
    return (px, py, pz), (gx, gy, gz), (sx, sy, sz)

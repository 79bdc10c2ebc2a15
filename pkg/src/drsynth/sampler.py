"""Domain-randomization draws: object sets, poses, camera, scene box, lights, distractors, textures.

Every function takes an explicit ``numpy.random.Generator``; nothing reads global state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import primitives
from .config import GenerationConfig, SamplerConfig
from .geometry import Aabb, Pose, TriangleMesh, load_mesh, mesh_aabb, transform_mesh, translate_mesh
from .material import MaterialError, MaterialSpec, list_images, load_material_library

log = logging.getLogger(__name__)

TARGET, DISTRACTOR = "target", "distractor"


# --------------------------------------------------------------------------- inputs


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    mesh_path: str
    scale: float
    mesh: TriangleMesh  # scaled to meters, untransformed


@dataclass(frozen=True)
class ObjectCatalog:
    categories: tuple[CatalogEntry, ...]

    @classmethod
    def from_config(cls, cfg: GenerationConfig) -> "ObjectCatalog":
        entries = []
        for c in cfg.catalog.categories:
            mesh = load_mesh(c.mesh)
            s = c.scale * cfg.catalog.scale
            if s != 1.0:
                mesh = transform_mesh(mesh, Pose(scale=s))
            entries.append(CatalogEntry(c.name, c.mesh, s, mesh))
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("category names must be unique")
        return cls(tuple(entries))

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.categories]

    def __len__(self) -> int:
        return len(self.categories)


@dataclass(frozen=True)
class AssetLibrary:
    backgrounds: tuple[Path, ...] = ()
    object_images: tuple[Path, ...] = ()
    materials: tuple[MaterialSpec, ...] = ()

    @classmethod
    def from_config(cls, cfg: GenerationConfig) -> "AssetLibrary":
        a = cfg.assets
        return cls(
            tuple(list_images(a.backgrounds)) if a.backgrounds else (),
            tuple(list_images(a.object_images)) if a.object_images else (),
            tuple(load_material_library(a.materials)) if a.materials else (),
        )

    @property
    def metals(self) -> tuple[MaterialSpec, ...]:
        return tuple(m for m in self.materials if m.is_metal)


# --------------------------------------------------------------------------- scene records


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)

    def contains(self, other: "Rect") -> bool:
        return self.x0 <= other.x0 and self.y0 <= other.y0 and other.x1 <= self.x1 and other.y1 <= self.y1


@dataclass(frozen=True)
class ObjectInstance:
    category: int  # catalog index, -1 for distractors
    pose: Pose
    material: MaterialSpec
    kind: str
    instance_id: int
    mesh: TriangleMesh = field(repr=False, compare=False)  # world space
    shape: str = ""  # distractor primitive name

    @property
    def aabb(self) -> Aabb:
        return mesh_aabb(self.mesh)


@dataclass(frozen=True)
class CameraSpec:
    r: float
    theta: float
    phi: float
    center: tuple[float, float, float]
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    focal_length_mm: float
    sensor_width_mm: float
    width: int
    height: int

    @property
    def fov(self) -> float:
        """Horizontal field of view (rad)."""
        return 2.0 * math.atan(self.sensor_width_mm / (2.0 * self.focal_length_mm))

    @property
    def offset(self) -> np.ndarray:
        return np.asarray(self.position) - np.asarray(self.center)

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(forward, right, up) camera axes in world space."""
        fwd = np.asarray(self.look_at, dtype=np.float64) - np.asarray(self.position, dtype=np.float64)
        fwd /= np.linalg.norm(fwd)
        world_up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, world_up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return fwd, right, up

    def with_size(self, width: int, height: int) -> "CameraSpec":
        return CameraSpec(self.r, self.theta, self.phi, self.center, self.position, self.look_at,
                          self.focal_length_mm, self.sensor_width_mm, width, height)


def spherical_offset(r: float, theta: float, phi: float) -> np.ndarray:
    """Spherical (radius, polar, azimuth) to Cartesian offset."""
    return np.array([r * math.cos(phi) * math.sin(theta), r * math.sin(phi) * math.sin(theta), r * math.cos(theta)])


@dataclass(frozen=True)
class AreaLight:
    center: tuple[float, float, float]
    half_extents: tuple[float, float]
    normal: tuple[float, float, float]
    power: float
    color: tuple[float, float, float]

    def __post_init__(self):
        if self.power < 0 or min(self.half_extents) <= 0:
            raise ValueError("light power must be >= 0 and extents > 0")

    @property
    def area(self) -> float:
        return 4.0 * self.half_extents[0] * self.half_extents[1]

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit tangent axes (u, v) spanning the rectangle, with u x v = normal."""
        n = np.asarray(self.normal, dtype=np.float64)
        ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(ref, n)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return u, v

    def radiance(self) -> np.ndarray:
        """Emitted radiance of a one-sided Lambertian emitter of this power."""
        return np.asarray(self.color) * self.power / (math.pi * self.area)


@dataclass(frozen=True)
class SceneBox:
    center: tuple[float, float]
    side: float
    wall_height: float

    def contains(self, p, strict: bool = True) -> bool:
        h = self.side / 2
        x, y, z = p
        cx, cy = self.center
        if strict:
            return abs(x - cx) < h and abs(y - cy) < h and 0 < z < self.wall_height
        return abs(x - cx) <= h and abs(y - cy) <= h and 0 <= z <= self.wall_height


@dataclass(frozen=True)
class SceneLayout:
    targets: tuple[ObjectInstance, ...]
    distractors: tuple[ObjectInstance, ...]
    objects_area: Rect
    box: SceneBox
    background: MaterialSpec
    camera: CameraSpec
    lights: tuple[AreaLight, ...]
    dropped_targets: int = 0
    dropped_distractors: int = 0

    @property
    def instances(self) -> tuple[ObjectInstance, ...]:
        return self.targets + self.distractors


# --------------------------------------------------------------------------- draws


def sample_object_set(n_categories: int, max_count: int, rng: np.random.Generator) -> list[int]:
    """Count uniform on {0..max_count}; categories dealt round-robin over a shuffled order."""
    if n_categories <= 0:
        raise ValueError("catalog is empty")
    n = int(rng.integers(0, max_count + 1))
    order = rng.permutation(n_categories)
    return [int(order[i % n_categories]) for i in range(n)]


def sample_pose(mesh: TriangleMesh, placed: Sequence[Aabb], region: Rect, rotation_limits, rng,
                max_attempts: int = 100, scale: float = 1.0, gravity: bool = True):
    """Random rotation within per-axis clamps, footprint center uniform in ``region``.

    Accepted only when the ground-projected AABB misses every box in ``placed``.
    Returns ``(pose, world_mesh)`` or ``None`` after ``max_attempts`` rejections.
    """
    if not (region.x1 > region.x0 and region.y1 > region.y0):
        raise ValueError("placement region is degenerate")
    lim = [float(a) for a in rotation_limits]
    for _ in range(max_attempts):
        rot = tuple(float(rng.uniform(-a, a)) if a > 0 else 0.0 for a in lim)
        cx = float(rng.uniform(region.x0, region.x1))
        cy = float(rng.uniform(region.y0, region.y1))
        rotated = transform_mesh(mesh, Pose((0.0, 0.0, 0.0), rot, scale))
        box = mesh_aabb(rotated)
        c = box.center
        dz = -float(box.min[2]) if gravity else 0.0
        offset = (cx - float(c[0]), cy - float(c[1]), dz)
        moved = Aabb(box.min + offset, box.max + offset)
        if any(moved.overlaps_xy(p) for p in placed):
            continue
        return Pose(offset, rot, scale), translate_mesh(rotated, offset)
    return None


def compute_objects_area(boxes: Sequence[Aabb], default_size: float = 1.0) -> Rect:
    if not boxes:
        h = default_size / 2
        return Rect(-h, -h, h, h)
    lo = np.min([b.min[:2] for b in boxes], axis=0)
    hi = np.max([b.max[:2] for b in boxes], axis=0)
    return Rect(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def camera_radius_range(area: Rect, cam_cfg) -> tuple[float, float]:
    """r range: multiples of the distance at which the area diagonal fills the narrowest field of view."""
    fov_min = 2.0 * math.atan(cam_cfg.sensor_width_mm / (2.0 * cam_cfg.focal_length_mm[1]))
    base = (area.diagonal / 2.0) / math.tan(fov_min / 2.0)
    return cam_cfg.r_multiplier[0] * base, cam_cfg.r_multiplier[1] * base


def sample_camera(area: Rect, cam_cfg, rng, width: int = 720, height: int = 720) -> CameraSpec:
    r_lo, r_hi = camera_radius_range(area, cam_cfg)
    r = float(rng.uniform(r_lo, r_hi))
    theta = float(rng.uniform(*np.radians(cam_cfg.theta_deg)))
    phi_lo, phi_hi = np.radians(cam_cfg.phi_deg)
    phi = float(rng.uniform(phi_lo, phi_hi)) % (2.0 * math.pi)
    cx, cy = area.center
    center = np.array([cx, cy, 0.0])
    position = center + spherical_offset(r, theta, phi)
    d = area.diagonal
    shift = [float(rng.uniform(-s * d, s * d)) if s > 0 else 0.0 for s in cam_cfg.focus_shift]
    look_at = center + np.asarray(shift)
    focal = float(rng.uniform(*cam_cfg.focal_length_mm))
    return CameraSpec(r, theta, phi, tuple(center.tolist()), tuple(position.tolist()), tuple(look_at.tolist()),
                      focal, float(cam_cfg.sensor_width_mm), width, height)


def build_scene_box(area: Rect, r_max: float, margin: float = 1.25) -> SceneBox:
    if not r_max > 0:
        raise ValueError("r_max must be positive")
    side = max(area.diagonal, 2.0 * r_max) * margin
    return SceneBox(area.center, side, side / 2.0)


def light_count(box: SceneBox, light_cfg) -> int:
    return int(min(max(math.ceil(box.side ** 2 / light_cfg.reference_area), 1), light_cfg.max_count))


def sample_lights(box: SceneBox, light_cfg, rng) -> list[AreaLight]:
    count = light_count(box, light_cfg)
    h = box.side / 2
    cx, cy = box.center
    power_scale = box.side ** 2 / light_cfg.reference_area
    max_tilt = math.radians(light_cfg.max_tilt_deg)
    lights = []
    for _ in range(count):
        x = float(rng.uniform(cx - h, cx + h))
        y = float(rng.uniform(cy - h, cy + h))
        z = float(rng.uniform(*light_cfg.height_fraction)) * box.wall_height
        tilt = float(rng.uniform(0.0, max_tilt))
        azimuth = float(rng.uniform(0.0, 2.0 * math.pi))
        normal = (math.sin(tilt) * math.cos(azimuth), math.sin(tilt) * math.sin(azimuth), -math.cos(tilt))
        hx = float(rng.uniform(*light_cfg.size_fraction)) * box.side
        hy = float(rng.uniform(*light_cfg.size_fraction)) * box.side
        power = float(rng.uniform(*light_cfg.power_w)) * power_scale
        color = tuple(float(rng.uniform(light_cfg.color_min, 1.0)) for _ in range(3))
        lights.append(AreaLight((x, y, z), (hx, hy), normal, power, color))
    return lights


def sample_texture(policy: dict[str, float], assets: AssetLibrary, rng, jitter: float = 0.0) -> MaterialSpec:
    modes = [m for m in sorted(policy) if policy[m] > 0]
    if not modes:
        raise ValueError("texture policy has no mode with positive probability")
    p = np.array([policy[m] for m in modes], dtype=np.float64)
    mode = modes[int(rng.choice(len(modes), p=p / p.sum()))]
    if mode == "solid":
        return MaterialSpec.solid(rng.uniform(0.0, 1.0, 3).tolist())
    if mode == "image":
        if not assets.object_images:
            raise MaterialError("image texture mode requested but the object-image directory is empty")
        path = assets.object_images[int(rng.integers(len(assets.object_images)))]
        return MaterialSpec.from_image(path, name=path.stem)
    pool = assets.metals if mode == "pbr_metal" else assets.materials
    if not pool:
        raise MaterialError(f"{mode} texture mode requested but no matching materials were loaded")
    m = pool[int(rng.integers(len(pool)))]
    if jitter > 0:
        m = _jitter_material(m, jitter, rng)
    return m


def _jitter_material(m: MaterialSpec, amp: float, rng) -> MaterialSpec:
    from dataclasses import replace

    kw = {}
    if m.metalness_map is None:
        kw["metalness"] = float(np.clip(m.base_metalness + rng.uniform(-amp, amp), 0.0, 1.0))
    if m.roughness_map is None:
        kw["roughness"] = float(np.clip(m.base_roughness + rng.uniform(-amp, amp), 0.02, 1.0))
    return replace(m, **kw)


def sample_background(assets: AssetLibrary, box: SceneBox, rng) -> MaterialSpec:
    """Background image stretched once across each wall, or a random flat color without backgrounds."""
    if assets.backgrounds:
        path = assets.backgrounds[int(rng.integers(len(assets.backgrounds)))]
        return MaterialSpec.from_image(path, tiling=1.0 / box.side, name=path.stem)
    return MaterialSpec.solid(rng.uniform(0.0, 1.0, 3).tolist(), name="background")


def sample_distractors(box: SceneBox, targets: Sequence[Aabb], camera: CameraSpec | None, dcfg, policy,
                       assets: AssetLibrary, rng, first_id: int = 1, jitter: float = 0.0):
    """Unlabeled primitives anywhere in the box (floating allowed), never intersecting a target's 3D AABB.

    Returns ``(instances, dropped_count)``.
    """
    count = int(rng.integers(0, dcfg.max_count + 1))
    if targets:
        ref = float(np.mean([b.diagonal for b in targets]))
    else:
        ref = dcfg.fallback_size
    out: list[ObjectInstance] = []
    dropped = 0
    h = box.side / 2
    cx, cy = box.center
    for _ in range(count):
        shape = primitives.SHAPES[int(rng.integers(len(primitives.SHAPES)))]
        base = primitives.make_shape(shape)
        base_diag = mesh_aabb(base).diagonal
        scale = float(rng.uniform(*dcfg.scale_range)) * ref / base_diag
        material = sample_texture(policy, assets, rng, jitter)
        placed = None
        for _attempt in range(dcfg.max_attempts):
            rot = tuple(float(a) for a in rng.uniform(-math.pi, math.pi, 3))
            rotated = transform_mesh(base, Pose((0.0, 0.0, 0.0), rot, scale))
            bb = mesh_aabb(rotated)
            ext = bb.extent
            x = float(rng.uniform(cx - h + ext[0] / 2, cx + h - ext[0] / 2)) if ext[0] < box.side else cx
            y = float(rng.uniform(cy - h + ext[1] / 2, cy + h - ext[1] / 2)) if ext[1] < box.side else cy
            lift = float(rng.uniform(0.0, dcfg.float_height * box.wall_height))
            offset = np.array([x, y, 0.0]) - np.array([bb.center[0], bb.center[1], bb.min[2] - lift])
            moved = Aabb(bb.min + offset, bb.max + offset)
            if any(moved.overlaps(t) for t in targets):
                continue
            if camera is not None and moved.expanded(0.05 * ref).contains(camera.position):
                continue
            placed = (Pose(tuple(offset.tolist()), rot, scale), translate_mesh(rotated, offset))
            break
        if placed is None:
            dropped += 1
            continue
        pose, mesh = placed
        out.append(ObjectInstance(-1, pose, material, DISTRACTOR, first_id + len(out), mesh, shape))
    return out, dropped


def placement_region(meshes: Sequence[TriangleMesh], spread: float) -> Rect:
    """Square centered at the origin whose area scales with the summed object footprints."""
    if not meshes:
        return Rect(-0.5, -0.5, 0.5, 0.5)
    diag2 = sum(mesh_aabb(m).diagonal ** 2 for m in meshes)
    h = 0.5 * spread * math.sqrt(diag2)
    return Rect(-h, -h, h, h)


def sample_scene(catalog: ObjectCatalog, assets: AssetLibrary, cfg: GenerationConfig, rng,
                 max_objects: int | None = None) -> SceneLayout:
    """Draw one full randomized scene: targets, area, camera, box, lights, background, distractors."""
    scfg: SamplerConfig = cfg.sampler
    limit = cfg.max_targets if max_objects is None else max_objects
    cats = sample_object_set(len(catalog), limit, rng)
    meshes = [catalog.categories[c].mesh for c in cats]
    region = placement_region(meshes, scfg.placement_spread)
    limits = np.radians(scfg.rotation_limits_deg)
    targets: list[ObjectInstance] = []
    boxes: list[Aabb] = []
    dropped = 0
    for cat, mesh in zip(cats, meshes):
        material = sample_texture(scfg.texture_modes, assets, rng, scfg.pbr_jitter)
        res = sample_pose(mesh, boxes, region, limits, rng, scfg.max_placement_attempts)
        if res is None:
            dropped += 1
            log.debug("dropped target of category %d after %d attempts", cat, scfg.max_placement_attempts)
            continue
        pose, world = res
        targets.append(ObjectInstance(cat, pose, material, TARGET, len(targets) + 1, world))
        boxes.append(mesh_aabb(world))

    area = compute_objects_area(boxes, scfg.default_area)
    camera = sample_camera(area, scfg.camera, rng, cfg.width, cfg.height)
    _, r_max = camera_radius_range(area, scfg.camera)
    box = build_scene_box(area, r_max, scfg.scene_margin)
    lights = sample_lights(box, scfg.lights, rng)
    background = sample_background(assets, box, rng)
    distractors, d_dropped = sample_distractors(box, boxes, camera, scfg.distractors, scfg.texture_modes,
                                                assets, rng, first_id=len(targets) + 1, jitter=scfg.pbr_jitter)
    return SceneLayout(tuple(targets), tuple(distractors), area, box, background, camera, tuple(lights),
                       dropped, d_dropped)


def scene_summary(layout: SceneLayout, names: Sequence[str]) -> dict:
    """JSON-ready description of a layout for the manifest."""

    def r(x, nd=6):
        return [round(float(v), nd) for v in x] if isinstance(x, (tuple, list, np.ndarray)) else round(float(x), nd)

    def inst(o: ObjectInstance) -> dict:
        d = {
            "id": o.instance_id,
            "kind": o.kind,
            "category": names[o.category] if o.category >= 0 else o.shape,
            "translation": r(o.pose.translation),
            "rotation_deg": r(np.degrees(o.pose.rotation)),
            "scale": r(o.pose.scale),
            "texture": o.material.mode,
        }
        if o.material.name:
            d["material"] = o.material.name
        return d

    cam = layout.camera
    return {
        "instances": [inst(o) for o in layout.instances],
        "dropped": {"targets": layout.dropped_targets, "distractors": layout.dropped_distractors},
        "objects_area": r([layout.objects_area.x0, layout.objects_area.y0, layout.objects_area.x1,
                           layout.objects_area.y1]),
        "box": {"side": r(layout.box.side), "wall_height": r(layout.box.wall_height)},
        "background": layout.background.name or layout.background.mode,
        "camera": {
            "r": r(cam.r), "theta_deg": r(math.degrees(cam.theta)), "phi_deg": r(math.degrees(cam.phi)),
            "position": r(cam.position), "look_at": r(cam.look_at),
            "focal_length_mm": r(cam.focal_length_mm), "fov_deg": r(math.degrees(cam.fov)),
        },
        "lights": [{"center": r(l.center), "power_w": r(l.power), "color": r(l.color)} for l in layout.lights],
    }

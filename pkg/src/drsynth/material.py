"""Texture modes and the metal/rough reflectance model.

Shading kernels (``brdf_*``, ``tex_*``) are ``njit`` functions on scalars and
3-tuples so that both renderers call the exact same code as the Python
wrappers below.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

MODES = ("solid", "image", "pbr")
ROUGHNESS_FLOOR = 0.02
DEFAULT_TILING = 5.0  # repeats per meter, i.e. one repeat per 0.2 m
IMAGE_METALNESS, IMAGE_ROUGHNESS = 0.0, 0.6
SOLID_METALNESS, SOLID_ROUGHNESS = 0.0, 0.5
MAX_TEXTURE_SIZE = 512
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

_JIT = dict(cache=True, error_model="numpy")
INV_PI = 1.0 / math.pi


class MaterialError(ValueError):
    pass


# --------------------------------------------------------------------------- textures


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1.0 / 2.4) - 0.055)


@dataclass(frozen=True)
class TextureImage:
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1], linear

    def __post_init__(self):
        p = np.ascontiguousarray(self.pixels, dtype=np.float32)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] * p.shape[1] < 1:
            raise MaterialError(f"texture must be (H, W, 3), got {p.shape}")
        if not np.isfinite(p).all() or p.min() < 0 or p.max() > 1:
            raise MaterialError("texture values must be finite and within [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def constant(cls, rgb, size: int = 1) -> "TextureImage":
        return cls(np.broadcast_to(np.asarray(rgb, dtype=np.float32), (size, size, 3)).copy())


@lru_cache(maxsize=256)
def load_texture(path: str, srgb: bool = True) -> TextureImage:
    """Decode an image file to a linear RGB texture (cached by path)."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if max(im.size) > MAX_TEXTURE_SIZE:
                im.thumbnail((MAX_TEXTURE_SIZE, MAX_TEXTURE_SIZE), Image.Resampling.BILINEAR)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as e:
        raise MaterialError(f"{path}: unreadable image ({e})") from e
    if srgb:
        arr = srgb_to_linear(arr)
    return TextureImage(arr.astype(np.float32))


@nb.njit(inline="always", **_JIT)
def _bilinear(data, off, w, h, u, v):
    fu = (u - math.floor(u)) * w - 0.5
    fv = (v - math.floor(v)) * h - 0.5
    x0 = int(math.floor(fu))
    y0 = int(math.floor(fv))
    tx = fu - x0
    ty = fv - y0
    x0m, x1m = x0 % w, (x0 + 1) % w
    y0m, y1m = y0 % h, (y0 + 1) % h
    i00 = off + y0m * w + x0m
    i10 = off + y0m * w + x1m
    i01 = off + y1m * w + x0m
    i11 = off + y1m * w + x1m
    r = (1 - ty) * ((1 - tx) * data[i00, 0] + tx * data[i10, 0]) + ty * ((1 - tx) * data[i01, 0] + tx * data[i11, 0])
    g = (1 - ty) * ((1 - tx) * data[i00, 1] + tx * data[i10, 1]) + ty * ((1 - tx) * data[i01, 1] + tx * data[i11, 1])
    b = (1 - ty) * ((1 - tx) * data[i00, 2] + tx * data[i10, 2]) + ty * ((1 - tx) * data[i01, 2] + tx * data[i11, 2])
    return r, g, b


@nb.njit(**_JIT)
def tex_triplanar(data, meta, tx_yz, tx_xz, tx_xy, px, py, pz, nx, ny, nz, scale):
    """Blend of the yz / xz / xy projections weighted by |normal| (weights sum to 1).

    ``meta[k] = (offset, width, height)`` locates texture k inside the flat ``data`` atlas.
    """
    wx, wy, wz = abs(nx), abs(ny), abs(nz)
    s = wx + wy + wz
    if s == 0.0:
        wz, s = 1.0, 1.0
    wx, wy, wz = wx / s, wy / s, wz / s
    r = g = b = 0.0
    if wx > 0.0:
        cr, cg, cb = _bilinear(data, meta[tx_yz, 0], meta[tx_yz, 1], meta[tx_yz, 2], py * scale, pz * scale)
        r += wx * cr
        g += wx * cg
        b += wx * cb
    if wy > 0.0:
        cr, cg, cb = _bilinear(data, meta[tx_xz, 0], meta[tx_xz, 1], meta[tx_xz, 2], px * scale, pz * scale)
        r += wy * cr
        g += wy * cg
        b += wy * cb
    if wz > 0.0:
        cr, cg, cb = _bilinear(data, meta[tx_xy, 0], meta[tx_xy, 1], meta[tx_xy, 2], px * scale, py * scale)
        r += wz * cr
        g += wz * cg
        b += wz * cb
    return r, g, b


def pack_textures(textures: Sequence[TextureImage]) -> tuple[np.ndarray, np.ndarray]:
    """Flatten textures into one (texels, 3) atlas plus (offset, width, height) rows."""
    if not textures:
        return np.zeros((1, 3), dtype=np.float32), np.zeros((0, 3), dtype=np.int64)
    meta = np.zeros((len(textures), 3), dtype=np.int64)
    off = 0
    for k, t in enumerate(textures):
        meta[k] = (off, t.width, t.height)
        off += t.width * t.height
    data = np.concatenate([t.pixels.reshape(-1, 3) for t in textures]).astype(np.float32)
    return data, meta


def triplanar_lookup(texture, point, normal, scale: float = DEFAULT_TILING) -> np.ndarray:
    """Sample a texture without UVs. ``texture`` may be a single image or one per projection (yz, xz, xy)."""
    if scale <= 0:
        raise ValueError("tiling scale must be positive")
    texs = [texture] * 3 if isinstance(texture, TextureImage) else list(texture)
    if len(texs) != 3:
        raise ValueError("expected one texture or three (yz, xz, xy)")
    data, meta = pack_textures(texs)
    p = np.asarray(point, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    return np.array(tex_triplanar(data, meta, 0, 1, 2, p[0], p[1], p[2], n[0], n[1], n[2], float(scale)))


# --------------------------------------------------------------------------- BRDF kernels


@nb.njit(inline="always", **_JIT)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@nb.njit(inline="always", **_JIT)
def _normalize(x, y, z):
    n = math.sqrt(x * x + y * y + z * z)
    if n == 0.0:
        return 0.0, 0.0, 0.0
    return x / n, y / n, z / n


@nb.njit(inline="always", **_JIT)
def onb(n):
    """Orthonormal tangent frame around unit n (branchless construction)."""
    sign = math.copysign(1.0, n[2])
    a = -1.0 / (sign + n[2])
    b = n[0] * n[1] * a
    t = (1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0])
    s = (b, sign + n[1] * n[1] * a, -n[1])
    return t, s


@nb.njit(inline="always", **_JIT)
def _ggx_d(nh, a2):
    k = nh * nh * (a2 - 1.0) + 1.0
    return a2 / (math.pi * k * k)


@nb.njit(inline="always", **_JIT)
def _smith_g1(nv, a2):
    return 2.0 * nv / (nv + math.sqrt(a2 + (1.0 - a2) * nv * nv))


@nb.njit(inline="always", **_JIT)
def _fresnel(c, albedo, metal, spec):
    """Schlick Fresnel per channel: dielectric F0 = 0.04 (scaled by ``spec``) mixed toward albedo by metalness."""
    m = 1.0 - c
    m5 = m * m * m * m * m
    fd = spec * (0.04 + 0.96 * m5)
    fr = albedo[0] + (1.0 - albedo[0]) * m5
    fg = albedo[1] + (1.0 - albedo[1]) * m5
    fb = albedo[2] + (1.0 - albedo[2]) * m5
    return ((1.0 - metal) * fd + metal * fr, (1.0 - metal) * fd + metal * fg, (1.0 - metal) * fd + metal * fb)


# cosine-weighted hemispherical mean of the dielectric Schlick term: 0.04 + 0.96 * 2 / 42
_DIELECTRIC_HEMI_F = 0.04 + 0.96 / 21.0


@nb.njit(inline="always", **_JIT)
def _diffuse_transmission(c, spec):
    m = 1.0 - c
    return 1.0 - spec * (0.04 + 0.96 * m * m * m * m * m)


@nb.njit(**_JIT)
def brdf_eval(albedo, metal, rough, spec, n, wi, wo):
    """Reflectance density (1/sr) for light arriving along ``wi`` and leaving along ``wo``."""
    ni = _dot(n, wi)
    no = _dot(n, wo)
    if ni <= 0.0 or no <= 0.0:
        return 0.0, 0.0, 0.0
    hx, hy, hz = _normalize(wi[0] + wo[0], wi[1] + wo[1], wi[2] + wo[2])
    h = (hx, hy, hz)
    nh = max(_dot(n, h), 0.0)
    vh = max(_dot(wo, h), 0.0)
    a = max(rough, 0.02)
    a2 = a * a * a * a  # alpha = roughness^2
    f = _fresnel(vh, albedo, metal, spec)
    common = _ggx_d(nh, a2) * _smith_g1(ni, a2) * _smith_g1(no, a2) / (4.0 * ni * no)
    kd = (1.0 - metal) * INV_PI * _diffuse_transmission(ni, spec) * _diffuse_transmission(no, spec)
    kd /= 1.0 - spec * _DIELECTRIC_HEMI_F
    return (kd * albedo[0] + common * f[0],
            kd * albedo[1] + common * f[1],
            kd * albedo[2] + common * f[2])


@nb.njit(inline="always", **_JIT)
def _luma(c0, c1, c2):
    return 0.2126 * c0 + 0.7152 * c1 + 0.0722 * c2


@nb.njit(**_JIT)
def spec_lobe_prob(albedo, metal, spec, no):
    """Probability of sampling the specular lobe, from estimated lobe energies at the view angle."""
    f = _fresnel(max(no, 0.0), albedo, metal, spec)
    ws = _luma(f[0], f[1], f[2])
    wd = (1.0 - metal) * _luma(albedo[0], albedo[1], albedo[2]) * _diffuse_transmission(max(no, 0.0), spec)
    if ws + wd <= 0.0:
        return 0.5
    return ws / (ws + wd)


@nb.njit(**_JIT)
def brdf_pdf(albedo, metal, rough, spec, n, wi, wo):
    """Solid-angle density of ``brdf_sample`` producing ``wi``."""
    ni = _dot(n, wi)
    no = _dot(n, wo)
    if ni <= 0.0 or no <= 0.0:
        return 0.0
    ps = spec_lobe_prob(albedo, metal, spec, no)
    pdf = (1.0 - ps) * ni * INV_PI
    if ps > 0.0:
        hx, hy, hz = _normalize(wi[0] + wo[0], wi[1] + wo[1], wi[2] + wo[2])
        h = (hx, hy, hz)
        nh = max(_dot(n, h), 0.0)
        vh = _dot(wo, h)
        if vh > 0.0:
            a = max(rough, 0.02)
            pdf += ps * _ggx_d(nh, a * a * a * a) * nh / (4.0 * vh)
    return pdf


@nb.njit(**_JIT)
def brdf_sample(albedo, metal, rough, spec, n, wo, u0, u1, u2):
    """Draw an incoming direction; returns (wi, pdf). pdf == 0 marks a rejected sample."""
    no = _dot(n, wo)
    if no <= 0.0:
        return (0.0, 0.0, 1.0), 0.0
    t, s = onb(n)
    ps = spec_lobe_prob(albedo, metal, spec, no)
    if u0 < ps:
        a = max(rough, 0.02)
        a2 = a * a * a * a
        cos_t = math.sqrt((1.0 - u1) / (1.0 + (a2 - 1.0) * u1))
        sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
        phi = 2.0 * math.pi * u2
        lx, ly = sin_t * math.cos(phi), sin_t * math.sin(phi)
        h = (lx * t[0] + ly * s[0] + cos_t * n[0],
             lx * t[1] + ly * s[1] + cos_t * n[1],
             lx * t[2] + ly * s[2] + cos_t * n[2])
        vh = _dot(wo, h)
        wi = (2.0 * vh * h[0] - wo[0], 2.0 * vh * h[1] - wo[1], 2.0 * vh * h[2] - wo[2])
    else:
        r = math.sqrt(u1)
        phi = 2.0 * math.pi * u2
        lx, ly = r * math.cos(phi), r * math.sin(phi)
        lz = math.sqrt(max(0.0, 1.0 - u1))
        wi = (lx * t[0] + ly * s[0] + lz * n[0],
              lx * t[1] + ly * s[1] + lz * n[1],
              lx * t[2] + ly * s[2] + lz * n[2])
    if _dot(n, wi) <= 0.0:
        return wi, 0.0
    return wi, brdf_pdf(albedo, metal, rough, spec, n, wi, wo)


# --------------------------------------------------------------------------- materials


@dataclass(frozen=True)
class MaterialSpec:
    """One object appearance. Exactly one mode's payload is populated."""

    mode: str
    color: tuple[float, float, float] | None = None  # solid
    image: str | None = None  # image
    tiling: float = DEFAULT_TILING
    albedo: tuple[float, float, float] | None = None  # pbr constant albedo
    albedo_map: str | None = None
    metalness: float | None = None
    metalness_map: str | None = None
    roughness: float | None = None
    roughness_map: str | None = None
    specular: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise MaterialError(f"unknown material mode {self.mode!r}")
        solid = self.color is not None
        image = self.image is not None
        pbr = any(x is not None for x in (self.albedo, self.albedo_map, self.metalness, self.metalness_map,
                                           self.roughness, self.roughness_map))
        populated = {"solid": solid, "image": image, "pbr": pbr}
        if not populated[self.mode] or sum(populated.values()) != 1:
            raise MaterialError(f"material {self.name!r}: mode {self.mode!r} needs exactly its own payload")
        if solid and not all(0.0 <= c <= 1.0 for c in self.color):
            raise MaterialError(f"material {self.name!r}: color out of [0, 1]")
        if pbr:
            if self.albedo is None and self.albedo_map is None:
                raise MaterialError(f"material {self.name!r}: pbr mode needs an albedo color or map")
            if self.albedo is not None and not all(0.0 <= c <= 1.0 for c in self.albedo):
                raise MaterialError(f"material {self.name!r}: albedo out of [0, 1]")
            if self.metalness is not None and not 0.0 <= self.metalness <= 1.0:
                raise MaterialError(f"material {self.name!r}: metalness {self.metalness} out of [0, 1]")
            if self.roughness is not None and not ROUGHNESS_FLOOR <= self.roughness <= 1.0:
                raise MaterialError(f"material {self.name!r}: roughness {self.roughness} out of [0.02, 1]")
        if self.tiling <= 0:
            raise MaterialError("tiling scale must be positive")
        if not 0.0 <= self.specular <= 1.0:
            raise MaterialError("specular weight must be in [0, 1]")

    @classmethod
    def solid(cls, rgb, **kw) -> "MaterialSpec":
        return cls("solid", color=tuple(float(c) for c in rgb), **kw)

    @classmethod
    def from_image(cls, path, **kw) -> "MaterialSpec":
        return cls("image", image=str(path), **kw)

    @classmethod
    def pbr(cls, albedo=(0.8, 0.8, 0.8), metalness=0.0, roughness=0.5, **kw) -> "MaterialSpec":
        if albedo is not None:
            albedo = tuple(float(c) for c in albedo)
        return cls("pbr", albedo=albedo, metalness=metalness, roughness=roughness, **kw)

    @property
    def base_metalness(self) -> float:
        if self.mode == "pbr":
            return 0.0 if self.metalness is None else self.metalness
        return IMAGE_METALNESS if self.mode == "image" else SOLID_METALNESS

    @property
    def base_roughness(self) -> float:
        if self.mode == "pbr":
            return 0.5 if self.roughness is None else self.roughness
        return IMAGE_ROUGHNESS if self.mode == "image" else SOLID_ROUGHNESS

    @property
    def is_metal(self) -> bool:
        return self.mode == "pbr" and (self.metalness_map is not None or self.base_metalness >= 0.5)


def evaluate_brdf(albedo, metalness: float, roughness: float, wi, wo, normal, specular: float = 1.0) -> np.ndarray:
    """Python entry point to the shading kernel; returns RGB reflectance density."""
    return np.array(brdf_eval(_t3(albedo), float(metalness), float(roughness), float(specular),
                              _t3(normal), _t3(wi), _t3(wo)))


def brdf_lobe_pdf(albedo, metalness, roughness, wi, wo, normal, specular: float = 1.0) -> float:
    return float(brdf_pdf(_t3(albedo), float(metalness), float(roughness), float(specular),
                          _t3(normal), _t3(wi), _t3(wo)))


def sample_brdf(albedo, metalness: float, roughness: float, wo, normal, rng, specular: float = 1.0):
    """Importance-sample an incoming direction -> (wi, pdf, reflectance). Rejected samples have pdf 0."""
    u = rng.random(3)
    a, n, o = _t3(albedo), _t3(normal), _t3(wo)
    wi, pdf = brdf_sample(a, float(metalness), float(roughness), float(specular), n, o, u[0], u[1], u[2])
    f = brdf_eval(a, float(metalness), float(roughness), float(specular), n, wi, o)
    return np.array(wi), float(pdf), np.array(f)


def _t3(x) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=np.float64).ravel()
    return float(x[0]), float(x[1]), float(x[2])


# --------------------------------------------------------------------------- library

_ALBEDO_KEYS = ("albedo", "basecolor", "base_color", "diffuse", "color")
_DESCRIPTOR_NAMES = ("material.txt", "material.cfg")


def _parse_descriptor(path: Path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line and ":" not in line:
            raise MaterialError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1) if "=" in line else line.split(":", 1)
        out[key.strip().lower()] = value.strip()
    return out


def _float_list(value: str) -> tuple[float, ...]:
    return tuple(float(x) for x in value.replace(",", " ").split())


def _material_from_fields(name: str, fields: dict[str, str], maps: dict[str, Path]) -> MaterialSpec:
    albedo = None
    if "albedo" in fields:
        vals = _float_list(fields["albedo"])
        if len(vals) == 1:
            vals = vals * 3
        if len(vals) != 3:
            raise MaterialError(f"material {name!r}: albedo needs 1 or 3 values")
        albedo = vals
    metal = float(fields["metalness"]) if "metalness" in fields else None
    rough = float(fields["roughness"]) if "roughness" in fields else None
    albedo_map = maps.get("albedo")
    if albedo is None and albedo_map is None:
        albedo = (0.8, 0.8, 0.8)
    if albedo_map is not None:
        albedo = None
        load_texture(str(albedo_map))
    for key in ("metalness", "roughness"):
        if key in maps:
            load_texture(str(maps[key]), srgb=False)
    return MaterialSpec(
        "pbr", albedo=albedo, albedo_map=str(albedo_map) if albedo_map else None,
        metalness=metal if metal is not None or "metalness" in maps else 0.0,
        metalness_map=str(maps["metalness"]) if "metalness" in maps else None,
        roughness=rough if rough is not None or "roughness" in maps else 0.5,
        roughness_map=str(maps["roughness"]) if "roughness" in maps else None,
        tiling=float(fields.get("tiling", DEFAULT_TILING)), name=name,
    )


def load_material_library(directory, errors: list[str] | None = None) -> list[MaterialSpec]:
    """Load PBR materials: one per subdirectory (maps and/or descriptor) or per top-level ``*.txt`` descriptor.

    Invalid materials are skipped; their messages go to ``errors`` (and the log).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MaterialError(f"{directory}: material directory not found")
    specs: list[MaterialSpec] = []
    for entry in sorted(directory.iterdir()):
        try:
            if entry.is_dir():
                maps: dict[str, Path] = {}
                fields: dict[str, str] = {}
                for f in sorted(entry.iterdir()):
                    stem = f.stem.lower()
                    if f.name.lower() in _DESCRIPTOR_NAMES:
                        fields = _parse_descriptor(f)
                    elif f.suffix.lower() in IMAGE_SUFFIXES:
                        if "metal" in stem:
                            maps.setdefault("metalness", f)
                        elif "rough" in stem:
                            maps.setdefault("roughness", f)
                        elif any(k in stem for k in _ALBEDO_KEYS):
                            maps.setdefault("albedo", f)
                if not maps and not fields:
                    continue
                specs.append(_material_from_fields(entry.name, fields, maps))
            elif entry.suffix.lower() == ".txt":
                specs.append(_material_from_fields(entry.stem, _parse_descriptor(entry), {}))
        except (MaterialError, ValueError, OSError) as e:
            msg = f"{entry}: {e}"
            log.warning("skipping material %s", msg)
            if errors is not None:
                errors.append(msg)
    return specs


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if directory.is_dir() else []

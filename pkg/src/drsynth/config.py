"""Generation config: JSON schema, presets, validation."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .material import list_images, load_material_library

MASK_ID_LIMIT = 255
TEXTURE_MODES = ("solid", "image", "pbr", "pbr_metal")


class ConfigError(ValueError):
    """Invalid configuration; ``issues`` lists every violation found."""

    def __init__(self, issues: list[str]):
        self.issues = list(issues)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.issues))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _ordered_pair(v, lo=-math.inf, hi=math.inf, name="range"):
    a, b = v
    if not (lo <= a <= b <= hi):
        raise ValueError(f"{name} must satisfy {lo} <= min <= max <= {hi}, got {list(v)}")
    return v


class Category(_Model):
    name: str
    mesh: str
    scale: float = Field(1.0, gt=0)


class CatalogConfig(_Model):
    categories: list[Category] = Field(min_length=1)
    scale: float = Field(1.0, gt=0, description="global unit conversion applied to every mesh")

    @field_validator("categories")
    @classmethod
    def _unique(cls, cats):
        names = [c.name for c in cats]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate category names: {dupes}")
        return cats


class AssetsConfig(_Model):
    backgrounds: Optional[str] = None
    object_images: Optional[str] = None
    materials: Optional[str] = None


class RenderConfig(_Model):
    backend: Literal["path_traced", "rasterized"] = "path_traced"
    spp: int = Field(64, ge=1)
    max_depth: int = Field(6, ge=1)
    rr_depth: int = Field(3, ge=1)
    exposure: float = Field(1.0, gt=0)
    supersample: int = Field(2, ge=1, le=4)


class CameraConfig(_Model):
    r_multiplier: tuple[float, float] = (0.9, 1.8)
    theta_deg: tuple[float, float] = (5.0, 85.0)
    phi_deg: tuple[float, float] = (0.0, 360.0)
    focal_length_mm: tuple[float, float] = (24.0, 50.0)
    sensor_width_mm: float = Field(36.0, gt=0)
    focus_shift: tuple[float, float, float] = Field((0.1, 0.1, 0.05), description="fraction of ObjectsArea diagonal")

    @field_validator("r_multiplier")
    @classmethod
    def _r(cls, v):
        return _ordered_pair(v, 1e-6, name="r_multiplier")

    @field_validator("theta_deg")
    @classmethod
    def _theta(cls, v):
        if not 0 < v[0]:
            raise ValueError("theta_deg minimum must be > 0")
        return _ordered_pair(v, 0.0, 90.0, name="theta_deg")

    @field_validator("phi_deg")
    @classmethod
    def _phi(cls, v):
        return _ordered_pair(v, 0.0, 360.0, name="phi_deg")

    @field_validator("focal_length_mm")
    @classmethod
    def _focal(cls, v):
        return _ordered_pair(v, 1e-3, name="focal_length_mm")

    @field_validator("focus_shift")
    @classmethod
    def _shift(cls, v):
        if min(v) < 0:
            raise ValueError("focus_shift limits must be >= 0")
        return v


class LightConfig(_Model):
    reference_area: float = Field(25.0, gt=0)
    max_count: int = Field(6, ge=1)
    power_w: tuple[float, float] = (50.0, 500.0)
    height_fraction: tuple[float, float] = (0.5, 1.0)
    max_tilt_deg: float = Field(30.0, ge=0, le=90)
    size_fraction: tuple[float, float] = (0.02, 0.06)
    color_min: float = Field(0.25, ge=0.25, le=1.0)

    @field_validator("power_w")
    @classmethod
    def _p(cls, v):
        return _ordered_pair(v, 0.0, name="power_w")

    @field_validator("height_fraction", "size_fraction")
    @classmethod
    def _frac(cls, v):
        if v[0] <= 0:
            raise ValueError("fractions must be > 0")
        return _ordered_pair(v, 0.0, 1.0)


class DistractorConfig(_Model):
    max_count: int = Field(8, ge=0)
    scale_range: tuple[float, float] = (0.3, 1.5)
    fallback_size: float = Field(0.2, gt=0)
    max_attempts: int = Field(50, ge=1)
    float_height: float = Field(0.25, ge=0, le=1, description="max lift of the lowest point, fraction of wall height")

    @field_validator("scale_range")
    @classmethod
    def _s(cls, v):
        return _ordered_pair(v, 1e-6, name="scale_range")


class SamplerConfig(_Model):
    max_objects: Optional[int] = Field(None, ge=0, description="defaults to the number of categories")
    placement_spread: float = Field(2.0, gt=0)
    max_placement_attempts: int = Field(100, ge=1)
    rotation_limits_deg: tuple[float, float, float] = (180.0, 180.0, 180.0)
    scene_margin: float = Field(1.25, ge=1.0)
    default_area: float = Field(1.0, gt=0)
    camera: CameraConfig = CameraConfig()
    lights: LightConfig = LightConfig()
    distractors: DistractorConfig = DistractorConfig()
    texture_modes: dict[str, float] = Field(default_factory=lambda: {"solid": 1 / 3, "image": 1 / 3, "pbr": 1 / 3})
    pbr_jitter: float = Field(0.0, ge=0, le=1)

    @field_validator("rotation_limits_deg")
    @classmethod
    def _rot(cls, v):
        if not all(0 <= a <= 180 for a in v):
            raise ValueError("rotation limits must be within [0, 180] degrees")
        return v

    @field_validator("texture_modes")
    @classmethod
    def _modes(cls, v):
        unknown = sorted(set(v) - set(TEXTURE_MODES))
        if unknown:
            raise ValueError(f"unknown texture modes {unknown}; expected {list(TEXTURE_MODES)}")
        if any(p < 0 for p in v.values()) or sum(v.values()) <= 0:
            raise ValueError("texture mode probabilities must be >= 0 with a positive sum")
        return v


class PostFxConfig(_Model):
    noise_probability: float = Field(0.1, ge=0, le=1)
    noise_amount: tuple[float, float] = (0.005, 0.03)
    blur_probability: float = Field(0.1, ge=0, le=1)
    blur_sigma: tuple[float, float] = (0.5, 2.0)

    @field_validator("noise_amount")
    @classmethod
    def _amount(cls, v):
        return _ordered_pair(v, 0.0, 1.0, name="noise_amount")

    @field_validator("blur_sigma")
    @classmethod
    def _sigma(cls, v):
        if v[0] <= 0:
            raise ValueError("blur_sigma must be > 0")
        return _ordered_pair(v, 0.0, name="blur_sigma")


class GenerationConfig(_Model):
    preset: Optional[str] = None
    catalog: CatalogConfig
    assets: AssetsConfig = AssetsConfig()
    image_count: Optional[int] = Field(None, ge=1)
    images_per_category: Optional[int] = Field(None, ge=1)
    width: int = Field(720, ge=64)
    height: int = Field(720, ge=64)
    render: RenderConfig = RenderConfig()
    sampler: SamplerConfig = SamplerConfig()
    postfx: PostFxConfig = PostFxConfig()
    min_visible_pixels: int = Field(25, ge=1)
    split_ratio: float = Field(0.9, gt=0, lt=1)
    seed: int = Field(0, ge=0)
    output_dir: str = "output"

    @model_validator(mode="after")
    def _counts(self):
        if self.image_count is None:
            per_cat = self.images_per_category or 1
            object.__setattr__(self, "image_count", per_cat * len(self.catalog.categories))
        if self.max_targets + self.sampler.distractors.max_count > MASK_ID_LIMIT:
            raise ValueError(f"max objects + max distractors must be <= {MASK_ID_LIMIT} (8-bit mask ids)")
        return self

    @property
    def max_targets(self) -> int:
        m = self.sampler.max_objects
        return len(self.catalog.categories) if m is None else m

    def digest(self) -> str:
        """Content hash of everything that affects output bytes."""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def echo(self) -> dict:
        return self.model_dump(mode="json", exclude={"output_dir"})


# --------------------------------------------------------------------------- presets


def list_presets() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("drsynth.presets").iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("drsynth.presets") / f"{name}.json"
    if not path.is_file():
        raise ConfigError([f"preset: unknown preset {name!r}; available: {list_presets()}"])
    return json.loads(path.read_text())


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "texture_modes":
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# --------------------------------------------------------------------------- loading


def _pydantic_issues(err: ValidationError) -> list[str]:
    issues = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        if e["type"] == "extra_forbidden":
            issues.append(f"{loc}: unknown key")
        else:
            issues.append(f"{loc}: {e['msg']}")
    return issues


def config_from_dict(data: dict, base_dir: Path | str = ".", *, check_paths: bool = True) -> GenerationConfig:
    if not isinstance(data, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    if data.get("preset"):
        data = _deep_merge(load_preset(data["preset"]), data)
    data = _resolve_paths(data, Path(base_dir))
    try:
        cfg = GenerationConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_pydantic_issues(e)) from None
    if check_paths:
        issues = check_config_paths(cfg)
        if issues:
            raise ConfigError(issues)
    return cfg


def _resolve_paths(data: dict, base: Path) -> dict:
    data = copy.deepcopy(data)

    def fix(p):
        return p if p is None or Path(p).is_absolute() else str((base / p).resolve())

    cats = data.get("catalog", {}).get("categories")
    if isinstance(cats, list):
        for c in cats:
            if isinstance(c, dict) and isinstance(c.get("mesh"), str):
                c["mesh"] = fix(c["mesh"])
    assets = data.get("assets")
    if isinstance(assets, dict):
        for k, v in assets.items():
            if isinstance(v, str):
                assets[k] = fix(v)
    if isinstance(data.get("output_dir"), str):
        data["output_dir"] = fix(data["output_dir"])
    return data


def check_config_paths(cfg: GenerationConfig) -> list[str]:
    """Every referenced path must exist; every mode with nonzero probability needs assets."""
    from .geometry import MeshError, load_mesh

    issues = []
    for i, c in enumerate(cfg.catalog.categories):
        try:
            load_mesh(c.mesh)
        except MeshError as e:
            issues.append(f"catalog.categories.{i}.mesh: {e}")
    for key in ("backgrounds", "object_images", "materials"):
        p = getattr(cfg.assets, key)
        if p is not None and not Path(p).is_dir():
            issues.append(f"assets.{key}: directory not found: {p}")
    modes = {k: v for k, v in cfg.sampler.texture_modes.items() if v > 0}
    if "image" in modes and not (cfg.assets.object_images and list_images(cfg.assets.object_images)):
        issues.append("assets.object_images: image texture mode enabled but no object images available")
    if "pbr" in modes or "pbr_metal" in modes:
        mats = load_material_library(cfg.assets.materials) if cfg.assets.materials and Path(cfg.assets.materials).is_dir() else []
        if not mats:
            issues.append("assets.materials: pbr texture mode enabled but no valid materials available")
        elif "pbr_metal" in modes and not any(m.is_metal for m in mats):
            issues.append("assets.materials: pbr_metal texture mode enabled but no metal materials available")
    if cfg.assets.backgrounds and Path(cfg.assets.backgrounds).is_dir() and not list_images(cfg.assets.backgrounds):
        issues.append("assets.backgrounds: directory contains no images")
    return issues


def load_config(path, overrides: dict | None = None) -> GenerationConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError([f"{path}: cannot read config ({e.strerror or e})"]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}:{e.lineno}:{e.colno}: JSON parse error: {e.msg}"]) from None
    if overrides:
        data = _deep_merge(data, {k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data, path.parent)

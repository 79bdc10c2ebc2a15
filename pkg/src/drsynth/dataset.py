"""End-to-end dataset generation: per-image substreams, rendering, labels, splits, manifest and stats."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np
import yaml
from PIL import Image

from .annotate import InstanceAnnotation, annotate, write_labels, write_mask_image
from .config import GenerationConfig
from .postfx import apply_postfx
from .render import RenderSettings, render, render_id_pass, scene_from_layout, tone_map
from .sampler import AssetLibrary, ObjectCatalog, SceneLayout, sample_scene, scene_summary

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SCENE_STREAM, POSTFX_STREAM = 0, 1
SPLIT_STREAM_TAG = 0x5EED5  # keeps the split permutation apart from every per-image stream
THREADS_ENV = "DRSYNTH_THREADS"


# --------------------------------------------------------------------------- seeding / threads


def image_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    """Independent generator for one (seed, image, purpose) triple."""
    return np.random.default_rng(np.random.SeedSequence([seed, index, stream]))


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, env)
    return os.cpu_count() or 1


def set_threads(threads: int | None) -> int:
    """Set the renderer's worker count (capped by numba's pool size); returns the value in effect."""
    n = default_threads() if threads is None else int(threads)
    n = max(1, min(n, numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def save_png(rgb: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


# --------------------------------------------------------------------------- one image


@dataclass
class RenderedImage:
    index: int
    layout: SceneLayout
    rgb: np.ndarray  # uint8 after post-processing
    ids: np.ndarray  # id pass (target instance ids, 0 elsewhere)
    annotations: list[InstanceAnnotation]
    postfx: dict
    clamped_samples: int
    backend: str


@dataclass
class GenerationContext:
    """Inputs loaded once per run and shared by every image."""

    cfg: GenerationConfig
    catalog: ObjectCatalog
    assets: AssetLibrary

    @classmethod
    def from_config(cls, cfg: GenerationConfig) -> "GenerationContext":
        return cls(cfg, ObjectCatalog.from_config(cfg), AssetLibrary.from_config(cfg))


def render_settings(cfg: GenerationConfig, index: int, backend: str | None = None) -> RenderSettings:
    r = cfg.render
    return RenderSettings(backend or r.backend, r.spp, r.max_depth, r.rr_depth, r.exposure, cfg.seed, index,
                          r.supersample)


def sample_layout(ctx: GenerationContext, index: int) -> SceneLayout:
    return sample_scene(ctx.catalog, ctx.assets, ctx.cfg, image_rng(ctx.cfg.seed, index, SCENE_STREAM))


def render_image(ctx: GenerationContext, index: int, backend: str | None = None,
                 layout: SceneLayout | None = None) -> RenderedImage:
    """Everything for image ``index`` in memory; identical to what a full run writes for that index."""
    cfg = ctx.cfg
    layout = sample_layout(ctx, index) if layout is None else layout
    scene = scene_from_layout(layout)
    settings = render_settings(cfg, index, backend)
    hdr, clamped = render(scene, layout.camera, settings)
    rgb = tone_map(hdr, settings.exposure)
    ids = render_id_pass(scene, layout.camera)
    anns = annotate(ids, [(t.instance_id, t.category) for t in layout.targets], cfg.min_visible_pixels)
    rgb, flags = apply_postfx(rgb, cfg.postfx, image_rng(cfg.seed, index, POSTFX_STREAM))
    return RenderedImage(index, layout, rgb, ids, anns, flags, clamped, settings.backend)


# --------------------------------------------------------------------------- splits


def split_indices(n: int, ratio: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Random permutation; the first ceil(ratio * n) go to train. Both lists come back sorted."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must be in (0, 1)")
    perm = rng.permutation(n)
    k = math.ceil(ratio * n)
    train, val = sorted(int(i) for i in perm[:k]), sorted(int(i) for i in perm[k:])
    if n > 0 and not val:
        log.warning("validation split is empty (%d images, ratio %.3f)", n, ratio)
    return train, val


def split_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, SPLIT_STREAM_TAG]))


def split_dataset(manifest: dict, ratio: float, rng: np.random.Generator) -> dict:
    """Assign ``split`` on every image entry (in place) and return the manifest."""
    entries = manifest.get("images", [])
    train, _ = split_indices(len(entries), ratio, rng)
    train_set = set(train)
    for k, e in enumerate(entries):
        e["split"] = "train" if k in train_set else "val"
    manifest["splits"] = {s: sum(e["split"] == s for e in entries) for s in ("train", "val")}
    return manifest


# --------------------------------------------------------------------------- outputs


def _file_names(index: int, split: str) -> dict[str, str]:
    stem = f"{index:06d}"
    return {
        "image": f"images/{split}/{stem}.png",
        "label": f"labels/{split}/{stem}.txt",
        "mask": f"masks/{stem}.png",
    }


def _entry(img: RenderedImage, cfg: GenerationConfig, names: Sequence[str], split: str) -> dict:
    return {
        "index": img.index,
        **_file_names(img.index, split),
        "split": split,
        "seed": [cfg.seed, img.index],
        "backend": img.backend,
        "scene": scene_summary(img.layout, names),
        "annotations": [
            {"id": a.instance_id, "class": a.class_index, "visible_pixels": a.visible_pixels,
             "labeled": a.record is not None}
            for a in img.annotations
        ],
        "postfx": img.postfx,
        "clamped_samples": img.clamped_samples,
    }


def write_image_outputs(img: RenderedImage, root: Path, split: str) -> None:
    files = _file_names(img.index, split)
    save_png(img.rgb, root / files["image"])
    write_labels([a.record for a in img.annotations if a.record is not None], root / files["label"])
    write_mask_image(img.ids, root / files["mask"])


def write_descriptor(manifest: dict, path) -> None:
    """YOLO-style dataset.yaml next to the image/label tree; an empty val split falls back to train."""
    path = Path(path)
    splits = manifest.get("splits", {})
    val = "images/val"
    if not splits.get("val"):
        log.warning("no validation images; descriptor points val at the training split")
        val = "images/train"
    names = manifest.get("categories", [])
    doc = {"train": "images/train", "val": val, "nc": len(names), "names": {i: n for i, n in enumerate(names)}}
    path.write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=False))


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def prepare_output_dir(root) -> Path:
    root = Path(root)
    for d in ("images/train", "images/val", "labels/train", "labels/val", "masks"):
        (root / d).mkdir(parents=True, exist_ok=True)
    return root


def generate_dataset(cfg: GenerationConfig, output_dir=None, threads: int | None = None,
                     progress: Callable[[int, int], None] | None = None) -> dict:
    """Render ``cfg.image_count`` images, write the full output tree and return the manifest.

    The split is drawn up front from the seed so every image is written straight to its
    final directory. An image that raises is recorded under ``failures`` and skipped.
    """
    root = prepare_output_dir(output_dir or cfg.output_dir)
    set_threads(threads)
    ctx = GenerationContext.from_config(cfg)
    n = cfg.image_count
    train, _ = split_indices(n, cfg.split_ratio, split_rng(cfg.seed))
    train_set = set(train)
    entries, failures = [], []
    for i in range(n):
        split = "train" if i in train_set else "val"
        try:
            img = render_image(ctx, i)
            write_image_outputs(img, root, split)
            entries.append(_entry(img, cfg, ctx.catalog.names, split))
        except Exception as e:  # one bad scene must not sink a long run
            log.error("image %d failed: %s", i, e)
            failures.append({"index": i, "split": split, "error": f"{type(e).__name__}: {e}"})
        if progress:
            progress(i + 1, n)
    manifest = {
        "version": MANIFEST_VERSION,
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "image_count": n,
        "width": cfg.width,
        "height": cfg.height,
        "backend": cfg.render.backend,
        "categories": ctx.catalog.names,
        "splits": {"train": sum(e["split"] == "train" for e in entries),
                   "val": sum(e["split"] == "val" for e in entries)},
        "images": entries,
        "failures": failures,
    }
    write_json(cfg.echo(), root / "config.json")
    write_descriptor(manifest, root / "dataset.yaml")
    write_json(manifest, root / "manifest.json")
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    data = json.loads(path.read_text())
    if not isinstance(data, dict) or "images" not in data:
        raise ValueError(f"{path}: not a dataset manifest")
    return data


# --------------------------------------------------------------------------- statistics


@dataclass
class StatsReport:
    image_count: int = 0
    categories: list[str] = field(default_factory=list)
    class_counts: dict[str, int] = field(default_factory=dict)
    objects_per_image: dict[int, int] = field(default_factory=dict)
    postfx_rates: dict[str, float] = field(default_factory=lambda: {"noise": 0.0, "blur": 0.0})
    texture_modes: dict[str, int] = field(default_factory=dict)
    camera_r_hist: tuple[list[int], list[float]] = ((), ())
    camera_theta_hist: tuple[list[int], list[float]] = ((), ())
    splits: dict[str, int] = field(default_factory=dict)
    failures: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "image_count": self.image_count, "categories": self.categories, "class_counts": self.class_counts,
            "objects_per_image": {str(k): v for k, v in self.objects_per_image.items()},
            "postfx_rates": self.postfx_rates, "texture_modes": self.texture_modes,
            "camera_r_hist": {"counts": list(self.camera_r_hist[0]), "edges": list(self.camera_r_hist[1])},
            "camera_theta_deg_hist": {"counts": list(self.camera_theta_hist[0]),
                                      "edges": list(self.camera_theta_hist[1])},
            "splits": self.splits, "failures": self.failures, "warnings": self.warnings,
        }

    def text(self) -> str:
        lines = [f"images: {self.image_count}  (train {self.splits.get('train', 0)}, val {self.splits.get('val', 0)},"
                 f" failed {self.failures})", "", "class            instances"]
        for name in self.categories:
            lines.append(f"{name:<16} {self.class_counts.get(name, 0):>9d}")
        lines.append("")
        lines.append("objects/image  " + "  ".join(f"{k}:{v}" for k, v in sorted(self.objects_per_image.items())))
        lines.append("postfx rates   " + "  ".join(f"{k}={v:.4f}" for k, v in self.postfx_rates.items()))
        lines.append("texture modes  " + "  ".join(f"{k}={v}" for k, v in sorted(self.texture_modes.items())))
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def dataset_stats(manifest: dict, root=None, bins: int = 10) -> StatsReport:
    """Summaries over a manifest; with ``root`` also checks that referenced files exist."""
    entries = manifest.get("images", [])
    names = list(manifest.get("categories", []))
    rep = StatsReport(image_count=len(entries), categories=names, class_counts={n: 0 for n in names},
                      failures=len(manifest.get("failures", [])))
    noise = blur = 0
    rs, thetas = [], []
    for e in entries:
        labeled = [a for a in e.get("annotations", []) if a.get("labeled")]
        for a in labeled:
            name = names[a["class"]] if 0 <= a["class"] < len(names) else str(a["class"])
            rep.class_counts[name] = rep.class_counts.get(name, 0) + 1
        rep.objects_per_image[len(labeled)] = rep.objects_per_image.get(len(labeled), 0) + 1
        fx = e.get("postfx", {})
        noise += "noise" in fx
        blur += "blur" in fx
        for inst in e.get("scene", {}).get("instances", []):
            mode = inst.get("texture")
            if mode:
                rep.texture_modes[mode] = rep.texture_modes.get(mode, 0) + 1
        cam = e.get("scene", {}).get("camera")
        if cam:
            rs.append(cam["r"])
            thetas.append(cam["theta_deg"])
        split = e.get("split")
        if split:
            rep.splits[split] = rep.splits.get(split, 0) + 1
        if root is not None:
            for key in ("image", "label", "mask"):
                if key in e and not (Path(root) / e[key]).is_file():
                    rep.warnings.append(f"missing file {e[key]}")
    rep.objects_per_image = dict(sorted(rep.objects_per_image.items()))
    if entries:
        rep.postfx_rates = {"noise": noise / len(entries), "blur": blur / len(entries)}
    if rs:
        c, edges = np.histogram(rs, bins=bins)
        rep.camera_r_hist = (c.tolist(), [round(float(x), 6) for x in edges])
        c, edges = np.histogram(thetas, bins=bins)
        rep.camera_theta_hist = (c.tolist(), [round(float(x), 6) for x in edges])
    return rep

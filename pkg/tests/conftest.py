"""Shared fixtures: a small on-disk asset tree (meshes, textures, materials) and config builders."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from drsynth import geometry, primitives


def _write_binary_stl(mesh, path: Path) -> None:
    tris = mesh.vertices[mesh.triangles].astype(np.float32)
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    rec = np.zeros(len(tris), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"], rec["v"] = n, tris
    with open(path, "wb") as f:
        f.write(b"\0" * 80)
        f.write(np.uint32(len(tris)).tobytes())
        f.write(rec.tobytes())


def _texture(path: Path, seed: int, size: int = 32, gray: bool = False) -> None:
    rng = np.random.default_rng(seed)
    if gray:
        img = (rng.random((size, size)) * 255).astype(np.uint8)
        Image.fromarray(img, mode="L").save(path)
    else:
        base = rng.integers(0, 256, 3)
        noise = rng.integers(-40, 40, (size, size, 3))
        Image.fromarray(np.clip(base + noise, 0, 255).astype(np.uint8), mode="RGB").save(path)


@pytest.fixture(scope="session")
def asset_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("assets")
    meshes = root / "meshes"
    meshes.mkdir()
    geometry.write_obj(primitives.cube(0.2), meshes / "block.obj")
    geometry.write_obj(primitives.torus(0.12, 0.05, 16, 8), meshes / "ring.obj")
    _write_binary_stl(primitives.cone(0.08, 0.2, 16), meshes / "peg.stl")
    for d, seeds in (("backgrounds", (1, 2)), ("images", (3, 4, 5))):
        (root / d).mkdir()
        for s in seeds:
            _texture(root / d / f"tex{s}.png", s)
    mats = root / "materials"
    mats.mkdir()
    (mats / "steel").mkdir()
    _texture(mats / "steel" / "albedo.png", 10)
    _texture(mats / "steel" / "metalness.png", 11, gray=True)
    _texture(mats / "steel" / "roughness.png", 12, gray=True)
    (mats / "steel" / "material.txt").write_text("metalness = 1.0\nroughness = 0.4\n")
    (mats / "plastic.txt").write_text("albedo = 0.7 0.1 0.1\nmetalness = 0\nroughness = 0.6\n")
    (mats / "brushed.txt").write_text("albedo = 0.9 0.9 0.9\nmetalness = 1\nroughness = 0.3\n")
    return root


@pytest.fixture(scope="session")
def base_config(asset_root) -> dict:
    """A small but complete config (paths absolute, every texture mode enabled)."""
    return {
        "catalog": {"categories": [
            {"name": "block", "mesh": str(asset_root / "meshes" / "block.obj")},
            {"name": "ring", "mesh": str(asset_root / "meshes" / "ring.obj")},
            {"name": "peg", "mesh": str(asset_root / "meshes" / "peg.stl")},
        ]},
        "assets": {
            "backgrounds": str(asset_root / "backgrounds"),
            "object_images": str(asset_root / "images"),
            "materials": str(asset_root / "materials"),
        },
        "image_count": 3,
        "width": 64,
        "height": 64,
        "render": {"backend": "rasterized", "spp": 4, "supersample": 1},
        "seed": 7,
    }


@pytest.fixture
def make_config(base_config, tmp_path):
    """Write a config JSON (base merged with overrides) and return its path."""

    def build(overrides: dict | None = None, name: str = "config.json") -> Path:
        from drsynth.config import _deep_merge

        data = _deep_merge(copy.deepcopy(base_config), overrides or {})
        data.setdefault("output_dir", str(tmp_path / "out"))
        path = tmp_path / name
        path.write_text(json.dumps(data, indent=2))
        return path

    return build

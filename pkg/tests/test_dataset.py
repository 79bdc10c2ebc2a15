import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import pytest
import yaml

from drsynth import dataset
from drsynth.annotate import YoloRecord, bbox_from_mask, read_mask_image
from drsynth.config import load_config
from drsynth.dataset import (dataset_stats, default_threads, generate_dataset, load_manifest, split_dataset,
                             split_indices, split_rng, write_descriptor)


def tree_hashes(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def read_labels(path: Path) -> list[YoloRecord]:
    out = []
    for line in path.read_text().splitlines():
        c, *v = line.split()
        out.append(YoloRecord(int(c), *map(float, v)))
    return out


@pytest.fixture
def small_run(make_config, tmp_path):
    cfg = load_config(make_config({"image_count": 4, "sampler": {"max_objects": 4}}))
    root = tmp_path / "run"
    return cfg, root, generate_dataset(cfg, root)


# --------------------------------------------------------------------------- generation


def test_output_tree_layout(small_run):
    cfg, root, manifest = small_run
    assert (root / "manifest.json").is_file() and (root / "dataset.yaml").is_file()
    assert json.loads((root / "config.json").read_text()) == cfg.echo()
    assert len(manifest["images"]) == 4 and manifest["failures"] == []
    for e in manifest["images"]:
        for key in ("image", "label", "mask"):
            assert not Path(e[key]).is_absolute() and (root / e[key]).is_file()
        assert e["image"].startswith(f"images/{e['split']}/")
    text = (root / "manifest.json").read_text()
    assert str(root) not in text
    assert load_manifest(root / "manifest.json") == manifest


def test_labels_agree_with_masks(small_run):
    cfg, root, manifest = small_run
    n_labels = 0
    for e in manifest["images"]:
        ids = read_mask_image(root / e["mask"])
        recs = read_labels(root / e["label"])
        labeled = [a for a in e["annotations"] if a["labeled"]]
        assert len(recs) == len(labeled)
        for rec, a in zip(recs, labeled):
            assert rec.class_index == a["class"] < len(manifest["categories"])
            mask = ids == a["id"]
            assert mask.sum() == a["visible_pixels"] >= cfg.min_visible_pixels
            assert rec.to_pixel_box(cfg.width, cfg.height) == bbox_from_mask(mask)
            n_labels += 1
    assert n_labels > 0


def test_full_run_is_deterministic(make_config, tmp_path):
    cfg = load_config(make_config({"image_count": 3}))
    generate_dataset(cfg, tmp_path / "a")
    generate_dataset(cfg, tmp_path / "b")
    a, b = tree_hashes(tmp_path / "a"), tree_hashes(tmp_path / "b")
    assert a == b and len(a) == 3 * 3 + 3


def test_image_matches_in_memory_render(small_run):
    cfg, root, manifest = small_run
    ctx = dataset.GenerationContext.from_config(cfg)
    img = dataset.render_image(ctx, 2)
    e = manifest["images"][2]
    from PIL import Image
    assert np.array_equal(np.asarray(Image.open(root / e["image"])), img.rgb)


def test_negative_sample(make_config, tmp_path):
    cfg = load_config(make_config({"image_count": 1, "sampler": {"max_objects": 0}}))
    m = generate_dataset(cfg, tmp_path / "neg")
    label = tmp_path / "neg" / m["images"][0]["label"]
    assert label.is_file() and label.read_bytes() == b""
    assert m["images"][0]["annotations"] == []


def test_rotation_clamp_preset(make_config, tmp_path, asset_root):
    cfg = load_config(make_config({"preset": "u1", "image_count": 6, "images_per_category": None,
                                   "width": 64, "height": 64, "render": {"backend": "rasterized"},
                                   "sampler": {"max_objects": 5}}))
    m = generate_dataset(cfg, tmp_path / "u1")
    seen = 0
    for e in m["images"]:
        for inst in e["scene"]["instances"]:
            if inst["kind"] == "target":
                rx, ry, _ = inst["rotation_deg"]
                assert abs(rx) <= 30 + 1e-6 and abs(ry) <= 30 + 1e-6
                seen += 1
    assert seen > 0


def test_failures_are_recorded_and_skipped(make_config, tmp_path, monkeypatch):
    cfg = load_config(make_config({"image_count": 3}))
    real = dataset.render_image

    def flaky(ctx, index, *a, **kw):
        if index == 1:
            raise RuntimeError("bad mesh")
        return real(ctx, index, *a, **kw)

    monkeypatch.setattr(dataset, "render_image", flaky)
    m = generate_dataset(cfg, tmp_path / "f")
    assert [e["index"] for e in m["images"]] == [0, 2]
    assert m["failures"][0]["index"] == 1 and "bad mesh" in m["failures"][0]["error"]


def test_thread_env_default(monkeypatch):
    monkeypatch.setenv("DRSYNTH_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("DRSYNTH_THREADS", "lots")
    assert default_threads() >= 1


# --------------------------------------------------------------------------- splits


def test_split_examples(caplog):
    train, val = split_indices(10, 0.9, split_rng(0))
    assert len(train) == 9 and len(val) == 1 and sorted(train + val) == list(range(10))
    with caplog.at_level(logging.WARNING):
        train, val = split_indices(1, 0.9, split_rng(0))
    assert (train, val) == ([0], []) and "empty" in caplog.text
    assert split_indices(50, 0.7, split_rng(4)) == split_indices(50, 0.7, split_rng(4))
    assert len(split_indices(7, 0.5, split_rng(1))[0]) == 4


def test_split_dataset_assigns_every_entry():
    m = {"images": [{"index": i} for i in range(20)]}
    split_dataset(m, 0.75, np.random.default_rng(3))
    assert m["splits"] == {"train": 15, "val": 5}
    assert all(e["split"] in ("train", "val") for e in m["images"])
    with pytest.raises(ValueError):
        split_indices(5, 1.0, split_rng(0))


# --------------------------------------------------------------------------- descriptor


def test_descriptor(tmp_path, caplog):
    m = {"categories": ["hook", "plug"], "splits": {"train": 3, "val": 1}}
    write_descriptor(m, tmp_path / "d.yaml")
    doc = yaml.safe_load((tmp_path / "d.yaml").read_text())
    assert doc == {"train": "images/train", "val": "images/val", "nc": 2, "names": {0: "hook", 1: "plug"}}
    first = (tmp_path / "d.yaml").read_bytes()
    write_descriptor(m, tmp_path / "d.yaml")
    assert (tmp_path / "d.yaml").read_bytes() == first
    with caplog.at_level(logging.WARNING):
        write_descriptor({"categories": ["a"], "splits": {"train": 1, "val": 0}}, tmp_path / "e.yaml")
    assert yaml.safe_load((tmp_path / "e.yaml").read_text())["val"] == "images/train"
    assert "validation" in caplog.text


# --------------------------------------------------------------------------- stats


def test_empty_manifest_stats():
    rep = dataset_stats({"images": [], "categories": ["a", "b"]})
    assert rep.image_count == 0 and rep.class_counts == {"a": 0, "b": 0}
    assert rep.postfx_rates == {"noise": 0.0, "blur": 0.0} and rep.objects_per_image == {}
    assert "images: 0" in rep.text()


def test_stats_match_label_scan(small_run):
    _, root, manifest = small_run
    rep = dataset_stats(manifest, root)
    scan = {n: 0 for n in manifest["categories"]}
    per_image = {}
    for p in sorted((root / "labels").rglob("*.txt")):
        lines = p.read_text().splitlines()
        per_image[len(lines)] = per_image.get(len(lines), 0) + 1
        for line in lines:
            scan[manifest["categories"][int(line.split()[0])]] += 1
    assert rep.class_counts == scan
    assert rep.objects_per_image == dict(sorted(per_image.items()))
    assert rep.warnings == []
    assert sum(rep.camera_r_hist[0]) == 4
    assert json.dumps(rep.to_dict())


def test_stats_flags_missing_files(small_run):
    _, root, manifest = small_run
    (root / manifest["images"][0]["image"]).unlink()
    rep = dataset_stats(manifest, root)
    assert len(rep.warnings) == 1 and manifest["images"][0]["image"] in rep.warnings[0]


def test_postfx_rate_reported():
    entries = [{"postfx": {"noise": {"amount": 0.01}} if i % 10 == 0 else {}} for i in range(5000)]
    rep = dataset_stats({"images": entries, "categories": []})
    assert rep.postfx_rates["noise"] == 0.1 and rep.postfx_rates["blur"] == 0.0

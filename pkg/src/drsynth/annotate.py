"""Instance masks, tight pixel boxes and YOLO label records from an id pass."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

MIN_VISIBLE_PIXELS = 25


@dataclass(frozen=True)
class PixelBox:
    """Inclusive integer pixel bounds."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (0 <= self.x_min <= self.x_max and 0 <= self.y_min <= self.y_max):
            raise ValueError(f"invalid pixel box {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1


@dataclass(frozen=True)
class YoloRecord:
    class_index: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.class_index < 0:
            raise ValueError("class index must be >= 0")
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name}={v} outside (0, 1]")

    def line(self) -> str:
        return f"{self.class_index:d} {self.cx:.6f} {self.cy:.6f} {self.w:.6f} {self.h:.6f}"

    def to_pixel_box(self, width: int, height: int) -> PixelBox:
        """Invert ``to_yolo`` (exact up to the float rounding of the record)."""
        x_min = round(self.cx * width - self.w * width / 2)
        y_min = round(self.cy * height - self.h * height / 2)
        return PixelBox(x_min, y_min, x_min + round(self.w * width) - 1, y_min + round(self.h * height) - 1)


@dataclass(frozen=True)
class InstanceAnnotation:
    instance_id: int
    class_index: int
    visible_pixels: int
    box: PixelBox | None
    record: YoloRecord | None  # None when filtered out as (nearly) invisible


def masks_from_id_pass(idbuf: np.ndarray, instance_ids: Sequence[int]) -> tuple[dict[int, np.ndarray], dict[int, int]]:
    """One boolean mask per instance id plus its popcount."""
    idbuf = np.asarray(idbuf)
    masks, counts = {}, {}
    hist = np.bincount(idbuf.ravel().astype(np.int64), minlength=max(instance_ids, default=0) + 1)
    for i in instance_ids:
        masks[i] = idbuf == i
        counts[i] = int(hist[i]) if i < len(hist) else 0
    return masks, counts


def bbox_from_mask(mask: np.ndarray) -> PixelBox | None:
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return PixelBox(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def to_yolo(box: PixelBox, width: int, height: int, class_index: int) -> YoloRecord:
    if box.x_max >= width or box.y_max >= height:
        raise ValueError(f"{box} outside a {width}x{height} image")
    return YoloRecord(
        class_index,
        (box.x_min + box.x_max + 1) / 2 / width,
        (box.y_min + box.y_max + 1) / 2 / height,
        box.width / width,
        box.height / height,
    )


def annotate(idbuf: np.ndarray, instances: Sequence[tuple[int, int]],
             min_visible_pixels: int = MIN_VISIBLE_PIXELS) -> list[InstanceAnnotation]:
    """Annotate ``(instance_id, class_index)`` pairs in id order; records only for visible-enough instances."""
    h, w = idbuf.shape
    instances = sorted(instances)
    masks, counts = masks_from_id_pass(idbuf, [i for i, _ in instances])
    out = []
    for iid, cls in instances:
        box = bbox_from_mask(masks[iid])
        rec = None
        if box is not None and counts[iid] >= min_visible_pixels:
            rec = to_yolo(box, w, h, cls)
        out.append(InstanceAnnotation(iid, cls, counts[iid], box, rec))
    return out


def write_labels(records: Sequence[YoloRecord], path) -> None:
    path = Path(path)
    text = "".join(r.line() + "\n" for r in records)
    try:
        path.write_text(text, encoding="ascii", newline="\n")
    except OSError as e:
        raise OSError(f"{path}: cannot write labels ({e.strerror or e})") from e


def write_mask_image(idbuf: np.ndarray, path) -> None:
    """8-bit single-channel PNG whose values are instance ids."""
    idbuf = np.asarray(idbuf)
    if idbuf.size and (idbuf.min() < 0 or idbuf.max() > 255):
        raise ValueError("mask ids must lie in [0, 255]")
    path = Path(path)
    try:
        Image.fromarray(idbuf.astype(np.uint8), mode="L").save(path, format="PNG")
    except OSError as e:
        raise OSError(f"{path}: cannot write mask ({e.strerror or e})") from e


def read_mask_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()

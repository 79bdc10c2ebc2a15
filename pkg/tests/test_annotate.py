import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drsynth.annotate import (PixelBox, YoloRecord, annotate, bbox_from_mask, masks_from_id_pass, read_mask_image,
                              to_yolo, write_labels, write_mask_image)


def test_masks_all_background():
    masks, counts = masks_from_id_pass(np.zeros((8, 8), np.int64), [1, 2])
    assert counts == {1: 0, 2: 0} and not masks[1].any()


def test_masks_full_frame():
    masks, counts = masks_from_id_pass(np.full((6, 9), 3), [3])
    assert counts[3] == 54 and masks[3].all()


def test_counts_match_histogram_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        idbuf = rng.integers(0, 6, (40, 30))
        _, counts = masks_from_id_pass(idbuf, [1, 2, 3, 4, 5, 9])
        for i in (1, 2, 3, 4, 5, 9):
            assert counts[i] == sum(int(v == i) for v in idbuf.ravel())


def test_bbox_examples():
    m = np.zeros((10, 10), bool)
    assert bbox_from_mask(m) is None
    m[3, 7] = True
    assert bbox_from_mask(m) == PixelBox(7, 3, 7, 3)
    assert bbox_from_mask(np.ones((720, 720), bool)) == PixelBox(0, 0, 719, 719)


def test_bbox_matches_scan_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        m = rng.random((37, 23)) < 0.01
        if not m.any():
            continue
        pts = [(x, y) for y in range(37) for x in range(23) if m[y, x]]
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        assert bbox_from_mask(m) == PixelBox(min(xs), min(ys), max(xs), max(ys))


def test_yolo_examples():
    r = to_yolo(PixelBox(0, 0, 99, 49), 100, 50, 0)
    assert (r.cx, r.cy, r.w, r.h) == (0.5, 0.5, 1.0, 1.0)
    r = to_yolo(PixelBox(180, 90, 359, 269), 720, 720, 1)
    assert (r.cx, r.cy, r.w, r.h) == (0.375, 0.25, 0.25, 0.25)
    r = to_yolo(PixelBox(0, 0, 0, 0), 720, 720, 0)
    assert (r.cx, r.cy, r.w, r.h) == (0.5 / 720, 0.5 / 720, 1 / 720, 1 / 720)


def test_yolo_rejects_out_of_image():
    with pytest.raises(ValueError):
        to_yolo(PixelBox(0, 0, 100, 10), 100, 100, 0)
    with pytest.raises(ValueError):
        YoloRecord(0, 0.5, 0.5, 1.2, 0.1)


@settings(max_examples=300, deadline=None)
@given(st.integers(64, 1024), st.integers(64, 1024), st.data())
def test_yolo_round_trip(w, h, data):
    x0 = data.draw(st.integers(0, w - 1))
    x1 = data.draw(st.integers(x0, w - 1))
    y0 = data.draw(st.integers(0, h - 1))
    y1 = data.draw(st.integers(y0, h - 1))
    box = PixelBox(x0, y0, x1, y1)
    rec = to_yolo(box, w, h, 3)
    assert rec.to_pixel_box(w, h) == box
    assert -1e-9 <= rec.cx - rec.w / 2 and rec.cx + rec.w / 2 <= 1 + 1e-9
    # the 6-decimal text form still recovers the box to within half a pixel
    parsed = [float(t) for t in rec.line().split()[1:]]
    assert abs(parsed[0] * w - (x0 + x1 + 1) / 2) <= 0.5 and abs(parsed[2] * w - box.width) <= 0.5


def test_annotate_visibility_threshold():
    idbuf = np.zeros((50, 50), np.int64)
    idbuf[10:15, 10:15] = 1  # 25 pixels: kept
    idbuf[30:34, 30:36] = 2  # 24 pixels: filtered
    idbuf[0, 0] = 3
    out = annotate(idbuf, [(2, 1), (1, 0), (3, 2), (4, 0)])
    assert [a.instance_id for a in out] == [1, 2, 3, 4]
    assert out[0].record is not None and out[0].visible_pixels == 25
    assert out[1].record is None and out[1].visible_pixels == 24
    assert out[3].box is None and out[3].record is None
    assert annotate(idbuf, [(2, 1)], min_visible_pixels=24)[0].record is not None


def test_annotate_box_equals_mask_bbox():
    rng = np.random.default_rng(2)
    idbuf = rng.integers(0, 4, (64, 64)) * (rng.random((64, 64)) < 0.3)
    for a in annotate(idbuf, [(1, 0), (2, 1), (3, 2)]):
        assert a.record.to_pixel_box(64, 64) == bbox_from_mask(idbuf == a.instance_id)
        assert a.visible_pixels == int((idbuf == a.instance_id).sum())


def test_write_labels(tmp_path):
    p = tmp_path / "empty.txt"
    write_labels([], p)
    assert p.exists() and p.read_bytes() == b""
    q = tmp_path / "one.txt"
    write_labels([YoloRecord(2, 0.5, 0.5, 1.0, 1.0)], q)
    assert q.read_text() == "2 0.500000 0.500000 1.000000 1.000000\n"
    first = q.read_bytes()
    write_labels([YoloRecord(2, 0.5, 0.5, 1.0, 1.0)], q)
    assert q.read_bytes() == first
    with pytest.raises(OSError, match="nodir"):
        write_labels([], tmp_path / "nodir" / "x.txt")


def test_mask_png_round_trip(tmp_path):
    write_mask_image(np.zeros((5, 7), np.int64), tmp_path / "z.png")
    assert not read_mask_image(tmp_path / "z.png").any()
    rng = np.random.default_rng(3)
    idbuf = rng.integers(0, 4, (33, 17))
    write_mask_image(idbuf, tmp_path / "m.png")
    back = read_mask_image(tmp_path / "m.png")
    assert np.array_equal(back, idbuf) and set(np.unique(back)) <= {0, 1, 2, 3}
    with pytest.raises(ValueError):
        write_mask_image(np.full((2, 2), 256), tmp_path / "bad.png")

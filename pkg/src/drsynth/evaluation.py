"""Detection metrics: IoU matching, precision/recall, AP (101-point), mAP@50, mAP@50-95 and a failure taxonomy."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_IOU = 0.6
DEFAULT_CONF = 0.5
COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = np.arange(101) / 100.0  # exact k/100, unlike linspace


class EvalInputError(ValueError):
    """Malformed label or prediction input, with file and line context."""


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_index: int
    cx: float
    cy: float
    w: float
    h: float
    confidence: float = 1.0

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


# --------------------------------------------------------------------------- I/O


_FIELDS = ("class", "cx", "cy", "w", "h", "confidence")


def _parse_record(tokens: list[str], image_id: str, where: str, with_conf: bool) -> Detection:
    want = 6 if with_conf else 5
    if len(tokens) != want and not (not with_conf and len(tokens) == 6):
        raise EvalInputError(f"{where}: expected {want} fields, got {len(tokens)}")
    try:
        cls = int(tokens[0])
    except ValueError:
        raise EvalInputError(f"{where}: class: not an integer: {tokens[0]!r}") from None
    if cls < 0:
        raise EvalInputError(f"{where}: class: must be >= 0, got {cls}")
    vals = []
    for name, tok in zip(_FIELDS[1:], tokens[1:]):
        try:
            v = float(tok)
        except ValueError:
            raise EvalInputError(f"{where}: {name}: not a number: {tok!r}") from None
        if name == "confidence":
            if not 0.0 <= v <= 1.0:
                raise EvalInputError(f"{where}: confidence: {v} outside [0, 1]")
        elif not 0.0 < v <= 1.0:
            raise EvalInputError(f"{where}: {name}: {v} outside (0, 1]")
        vals.append(v)
    conf = vals[4] if len(vals) == 5 else 1.0
    return Detection(image_id, cls, vals[0], vals[1], vals[2], vals[3], conf)


def _read_lines(path: Path) -> list[str]:
    try:
        return path.read_text().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise EvalInputError(f"{path}: cannot read ({e})") from None


def load_label_file(path, image_id: str | None = None, with_conf: bool = False) -> list[Detection]:
    path = Path(path)
    image_id = path.stem if image_id is None else image_id
    out = []
    for n, line in enumerate(_read_lines(path), 1):
        tokens = line.split()
        if tokens:
            out.append(_parse_record(tokens, image_id, f"{path}:{n}", with_conf))
    return out


def load_ground_truth(labels_dir) -> tuple[list[Detection], list[str]]:
    """All ``*.txt`` label files under a directory (recursively). Returns records and the image id list."""
    root = Path(labels_dir)
    if not root.is_dir():
        raise EvalInputError(f"{root}: ground-truth directory not found")
    records, images = [], []
    for p in sorted(root.rglob("*.txt")):
        images.append(p.stem)
        records.extend(load_label_file(p, p.stem))
    return records, images


def load_predictions(path) -> list[Detection]:
    """Either a directory of per-image files ("class cx cy w h conf") or one file of
    "image_id class cx cy w h conf" lines."""
    path = Path(path)
    if path.is_dir():
        out = []
        for p in sorted(path.rglob("*.txt")):
            out.extend(load_label_file(p, p.stem, with_conf=True))
        return out
    if not path.is_file():
        raise EvalInputError(f"{path}: predictions not found")
    out = []
    for n, line in enumerate(_read_lines(path), 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 7:
            raise EvalInputError(f"{path}:{n}: expected 7 fields (image_id class cx cy w h conf), got {len(tokens)}")
        out.append(_parse_record(tokens[1:], tokens[0], f"{path}:{n}", True))
    return out


# --------------------------------------------------------------------------- geometry


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of two center-size boxes."""
    ax0, ax1 = a[0] - a[2] / 2, a[0] + a[2] / 2
    ay0, ay1 = a[1] - a[3] / 2, a[1] + a[3] / 2
    bx0, bx1 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by0, by1 = b[1] - b[3] / 2, b[1] + b[3] / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from the same corner differences, so identical boxes give exactly 1
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return float(min(1.0, max(0.0, inter / union))) if union > 0 else 0.0


def iou_matrix(a: Sequence[Detection], b: Sequence[Detection]) -> np.ndarray:
    if not a or not b:
        return np.zeros((len(a), len(b)))
    A = np.array([d.box for d in a], dtype=np.float64)
    B = np.array([d.box for d in b], dtype=np.float64)
    ax0, ax1 = A[:, 0] - A[:, 2] / 2, A[:, 0] + A[:, 2] / 2
    ay0, ay1 = A[:, 1] - A[:, 3] / 2, A[:, 1] + A[:, 3] / 2
    bx0, bx1 = B[:, 0] - B[:, 2] / 2, B[:, 0] + B[:, 2] / 2
    by0, by1 = B[:, 1] - B[:, 3] / 2, B[:, 1] + B[:, 3] / 2
    iw = np.minimum(ax1[:, None], bx1[None]) - np.maximum(ax0[:, None], bx0[None])
    ih = np.minimum(ay1[:, None], by1[None]) - np.maximum(ay0[:, None], by0[None])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = ((ax1 - ax0) * (ay1 - ay0))[:, None] + ((bx1 - bx0) * (by1 - by0))[None] - inter
    return np.clip(np.divide(inter, union, out=np.zeros_like(inter), where=union > 0), 0.0, 1.0)


# --------------------------------------------------------------------------- matching


@dataclass
class MatchResult:
    """Per prediction (input order): matched gt index or -1. Per gt: matched prediction index or -1."""

    pred_to_gt: list[int]
    gt_to_pred: list[int]

    @property
    def tp(self) -> int:
        return sum(g >= 0 for g in self.pred_to_gt)

    @property
    def fp(self) -> int:
        return sum(g < 0 for g in self.pred_to_gt)

    @property
    def fn(self) -> int:
        return sum(p < 0 for p in self.gt_to_pred)


def confidence_order(preds: Sequence[Detection]) -> list[int]:
    """Indices by descending confidence; ties keep input order."""
    return sorted(range(len(preds)), key=lambda i: -preds[i].confidence)


def match_detections(preds: Sequence[Detection], gts: Sequence[Detection], iou_threshold: float,
                     class_aware: bool = True) -> MatchResult:
    """Greedy matching per image (and class): each prediction, most confident first, takes the
    unmatched ground truth of highest IoU at or above the threshold."""
    pred_to_gt = [-1] * len(preds)
    gt_to_pred = [-1] * len(gts)
    groups: dict[tuple, tuple[list[int], list[int]]] = defaultdict(lambda: ([], []))
    for i, p in enumerate(preds):
        groups[(p.image_id, p.class_index if class_aware else 0)][0].append(i)
    for j, g in enumerate(gts):
        groups[(g.image_id, g.class_index if class_aware else 0)][1].append(j)
    for pi, gi in groups.values():
        if not pi or not gi:
            continue
        sub_p = [preds[i] for i in pi]
        m = iou_matrix(sub_p, [gts[j] for j in gi])
        taken = np.zeros(len(gi), dtype=bool)
        for a in confidence_order(sub_p):
            row = np.where(taken, -1.0, m[a])
            b = int(np.argmax(row))  # first maximum: lower gt index wins IoU ties
            if row[b] >= iou_threshold:
                taken[b] = True
                pred_to_gt[pi[a]] = gi[b]
                gt_to_pred[gi[b]] = pi[a]
    return MatchResult(pred_to_gt, gt_to_pred)


# --------------------------------------------------------------------------- AP


def average_precision(confidences: Sequence[float], is_tp: Sequence[bool], n_gt: int) -> float | None:
    """101-point interpolated AP of one class. None when there is neither ground truth nor prediction."""
    if n_gt == 0:
        return 0.0 if len(confidences) else None
    if not len(confidences):
        return 0.0
    order = sorted(range(len(confidences)), key=lambda i: -confidences[i])
    tp = np.array([bool(is_tp[i]) for i in order], dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    # precision envelope: max precision at any recall >= r
    env = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    vals = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(vals.mean())


def _class_ap(preds: Sequence[Detection], gts: Sequence[Detection], cls: int, thr: float) -> float | None:
    p = [d for d in preds if d.class_index == cls]
    g = [d for d in gts if d.class_index == cls]
    m = match_detections(p, g, thr, class_aware=True)
    return average_precision([d.confidence for d in p], [k >= 0 for k in m.pred_to_gt], len(g))


# --------------------------------------------------------------------------- reports


@dataclass
class ClassMetrics:
    class_index: int
    name: str
    gt: int
    ap50: float | None
    ap50_95: float | None
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


@dataclass
class MetricsReport:
    iou_threshold: float
    conf_threshold: float
    map50: float
    map50_95: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    precision_undefined: bool
    classes: list[ClassMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _class_names(names: Sequence[str] | None, classes: Iterable[int]) -> dict[int, str]:
    out = {}
    for c in classes:
        out[c] = names[c] if names is not None and 0 <= c < len(names) else str(c)
    return out


def map_metrics(preds: Sequence[Detection], gts: Sequence[Detection], iou_threshold: float = DEFAULT_IOU,
                conf_threshold: float = DEFAULT_CONF, names: Sequence[str] | None = None) -> MetricsReport:
    """mAP over every prediction; precision/recall after the confidence cut, matched at ``iou_threshold``.

    Classes with neither ground truth nor predictions are left out of the means. Overall precision
    and recall pool TP/FP/FN over all classes.
    """
    classes = sorted({d.class_index for d in gts} | {d.class_index for d in preds})
    if names is not None:
        classes = sorted(set(classes) | set(range(len(names))))
    labels = _class_names(names, classes)
    kept = [d for d in preds if d.confidence >= conf_threshold]
    per = []
    ap50s, ap_cocos = [], []
    for c in classes:
        g = [d for d in gts if d.class_index == c]
        ap50 = _class_ap(preds, gts, c, 0.5)
        aps = [_class_ap(preds, gts, c, t) for t in COCO_THRESHOLDS]
        ap_coco = None if ap50 is None else float(np.mean(aps))
        pk = [d for d in kept if d.class_index == c]
        m = match_detections(pk, g, iou_threshold, class_aware=True)
        tp, fp, fn = m.tp, m.fp, m.fn
        per.append(ClassMetrics(c, labels[c], len(g), ap50, ap_coco, tp / (tp + fp) if tp + fp else 0.0,
                                tp / len(g) if g else 0.0, tp, fp, fn))
        if ap50 is not None:
            ap50s.append(ap50)
            ap_cocos.append(ap_coco)
    tp = sum(c.tp for c in per)
    fp = sum(c.fp for c in per)
    fn = sum(c.fn for c in per)
    return MetricsReport(
        iou_threshold, conf_threshold,
        float(np.mean(ap50s)) if ap50s else 0.0,
        float(np.mean(ap_cocos)) if ap_cocos else 0.0,
        tp / (tp + fp) if tp + fp else 0.0,
        tp / (tp + fn) if tp + fn else 0.0,
        tp, fp, fn, tp + fp == 0, per,
    )


@dataclass
class FailureReport:
    iou_threshold: float
    missed: int
    wrong: int  # false positives overlapping a gt of another class
    background_fp: int
    missed_by_class: dict[str, int] = field(default_factory=dict)
    wrong_as_gt_by_class: dict[str, int] = field(default_factory=dict)  # FNs explained by another class
    confusion: dict[str, int] = field(default_factory=dict)  # "gt->pred" counts over wrong detections

    def to_dict(self) -> dict:
        return asdict(self)


def failure_analysis(preds: Sequence[Detection], gts: Sequence[Detection], iou_threshold: float = DEFAULT_IOU,
                     conf_threshold: float = DEFAULT_CONF, names: Sequence[str] | None = None) -> FailureReport:
    """Sort every false negative into missed / wrong and every false positive into wrong / background."""
    kept = [d for d in preds if d.confidence >= conf_threshold]
    m = match_detections(kept, gts, iou_threshold, class_aware=True)
    labels = _class_names(names, {d.class_index for d in gts} | {d.class_index for d in kept})
    by_img_p: dict[str, list[int]] = defaultdict(list)
    by_img_g: dict[str, list[int]] = defaultdict(list)
    for i, p in enumerate(kept):
        by_img_p[p.image_id].append(i)
    for j, g in enumerate(gts):
        by_img_g[g.image_id].append(j)
    rep = FailureReport(iou_threshold, 0, 0, 0)
    confusion: dict[str, int] = defaultdict(int)
    for j, g in enumerate(gts):
        if m.gt_to_pred[j] >= 0:
            continue
        cand = [kept[i] for i in by_img_p[g.image_id]]
        ious = iou_matrix(cand, [g])[:, 0] if cand else np.zeros(0)
        if not np.any(ious >= iou_threshold):
            rep.missed += 1
            rep.missed_by_class[labels[g.class_index]] = rep.missed_by_class.get(labels[g.class_index], 0) + 1
        else:
            rep.wrong_as_gt_by_class[labels[g.class_index]] = rep.wrong_as_gt_by_class.get(labels[g.class_index], 0) + 1
    for i, p in enumerate(kept):
        if m.pred_to_gt[i] >= 0:
            continue
        cand_idx = [j for j in by_img_g[p.image_id] if gts[j].class_index != p.class_index]
        if cand_idx:
            ious = iou_matrix([p], [gts[j] for j in cand_idx])[0]
            best = int(np.argmax(ious))
            if ious[best] >= iou_threshold:
                rep.wrong += 1
                key = f"{labels[gts[cand_idx[best]].class_index]}->{labels[p.class_index]}"
                confusion[key] += 1
                continue
        rep.background_fp += 1
    rep.confusion = dict(sorted(confusion.items()))
    return rep


def evaluation_report(metrics: MetricsReport, failures: FailureReport) -> dict:
    return {"metrics": metrics.to_dict(), "failures": failures.to_dict()}


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n")


def _pct(v: float | None) -> str:
    return "   -" if v is None else f"{100.0 * v:5.1f}"


def format_report(metrics: MetricsReport, failures: FailureReport) -> str:
    lines = [f"IoU={metrics.iou_threshold:.2f} conf={metrics.conf_threshold:.2f}", ""]
    width = max([len("class"), len("all")] + [len(c.name) for c in metrics.classes])
    lines.append(f"{'class':<{width}}  {'gt':>6}  {'P':>5}  {'R':>5}  {'mAP50':>5}  {'mAP50-95':>8}")
    for c in metrics.classes:
        lines.append(f"{c.name:<{width}}  {c.gt:>6d}  {_pct(c.precision)}  {_pct(c.recall)}  {_pct(c.ap50)}  "
                     f"{_pct(c.ap50_95):>8}")
    total_gt = sum(c.gt for c in metrics.classes)
    lines.append(f"{'all':<{width}}  {total_gt:>6d}  {_pct(metrics.precision)}  {_pct(metrics.recall)}  "
                 f"{_pct(metrics.map50)}  {_pct(metrics.map50_95):>8}")
    if metrics.precision_undefined:
        lines.append("note: no predictions above the confidence threshold; precision reported as 0")
    lines += ["", f"failures @ IoU={failures.iou_threshold:.2f}: missed={failures.missed} "
                  f"wrong={failures.wrong} background_fp={failures.background_fp}"]
    for k, v in failures.confusion.items():
        lines.append(f"  confusion {k}: {v}")
    return "\n".join(lines)

"""Single-class COCO-style detection metrics: IoU, greedy matching, 101-point AP.

Boxes are ``(x, y, w, h)`` in pixels with a top-left origin. Score ties
are broken by input order and ground-truth ties by lower index, so every
result is exactly reproducible. There is no area or max-detection
stratification and no crowd regions. With no ground truth at all, AP is
reported as 0 rather than undefined.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import ValidationError

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
# i / 100 correctly rounded, so a recall of exactly k / n meets its grid point
RECALL_GRID = np.arange(101) / 100.0


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    score: float
    image_id: Hashable = 0

    def __post_init__(self):
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ValidationError(f"detection box needs positive extent, got {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruthBox:
    box: tuple[float, float, float, float]
    image_id: Hashable = 0

    def __post_init__(self):
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ValidationError(f"ground-truth box needs positive extent, got {self.box}")


@dataclass
class ThresholdCurve:
    iou_threshold: float
    ap: float
    precision: np.ndarray
    recall: np.ndarray


@dataclass
class EvalResult:
    ap: float
    ap50: float
    ap75: float
    curves: list[ThresholdCurve] = field(default_factory=list)

    def row(self) -> str:
        return f"{self.ap:.4f} {self.ap50:.4f} {self.ap75:.4f}"


def iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (n, 4) and (m, 4) xywh arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2])
    y2 = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def score_order(dets: Sequence[Detection]) -> list[int]:
    """Indices sorted by descending score, ties kept in input order."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def greedy_match(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], thresh: float) -> list[bool]:
    """TP flags for ``dets`` (already in score order) against one image's ground truth.

    Each detection takes the unmatched ground-truth box of highest IoU, or
    is a false positive if that IoU is below ``thresh``.
    """
    if not dets:
        return []
    if not gts:
        return [False] * len(dets)
    ious = iou_matrix([d.box for d in dets], [g.box for g in gts])
    taken = np.zeros(len(gts), dtype=bool)
    flags = []
    for row in ious:
        cand = np.where(taken, -1.0, row)
        j = int(np.argmax(cand))  # first index wins ties
        if cand[j] >= thresh and not taken[j]:
            taken[j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(tp: Sequence[bool], num_gt: int) -> float:
    """101-point interpolated AP of a score-ordered TP/FP sequence."""
    return _pr_curve(tp, num_gt)[0]


def _pr_curve(tp: Sequence[bool], num_gt: int):
    tp = np.asarray(tp, dtype=bool)
    if num_gt == 0 or tp.size == 0:
        return 0.0, np.zeros(0), np.zeros(0)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / num_gt
    precision = ctp / (ctp + cfp)
    # envelope: best precision at any recall >= this point
    env = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    sampled = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(sampled.mean()), precision, recall


def clip_ground_truth(gts: Sequence[GroundTruthBox], sizes: dict) -> list[GroundTruthBox]:
    """Clip boxes to their image bounds with a warning; drop boxes clipped to nothing."""
    out = []
    for g in gts:
        size = sizes.get(g.image_id)
        if size is None:
            out.append(g)
            continue
        width, height = size
        x, y, w, h = g.box
        x1, y1 = max(0.0, x), max(0.0, y)
        x2, y2 = min(float(width), x + w), min(float(height), y + h)
        if (x1, y1, x2, y2) == (x, y, x + w, y + h):
            out.append(g)
            continue
        warnings.warn(f"ground-truth box {g.box} in image {g.image_id!r} exceeds bounds; clipped", stacklevel=2)
        if x2 > x1 and y2 > y1:
            out.append(GroundTruthBox((x1, y1, x2 - x1, y2 - y1), g.image_id))
    return out


def coco_ap(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], image_sizes: dict | None = None,
            image_ids: Sequence | None = None) -> EvalResult:
    """AP averaged over IoU 0.50:0.05:0.95, plus AP50 and AP75.

    ``image_ids`` lists the known images (default: those with ground
    truth); a detection on any other image is a validation error.
    ``image_sizes`` maps image id to ``(width, height)`` for clipping.
    """
    known = set(image_ids) if image_ids is not None else {g.image_id for g in gts}
    for i, d in enumerate(dets):
        if d.image_id not in known:
            raise ValidationError(f"detection on unknown image {d.image_id!r}", f"detections[{i}]")
    if image_sizes:
        gts = clip_ground_truth(gts, image_sizes)

    by_image_gt: dict = {}
    for g in gts:
        by_image_gt.setdefault(g.image_id, []).append(g)
    by_image_det: dict = {}
    for i, d in enumerate(dets):
        by_image_det.setdefault(d.image_id, []).append(i)
    order = score_order(dets)
    rank = {idx: r for r, idx in enumerate(order)}

    curves = []
    for t in IOU_THRESHOLDS:
        flags = np.zeros(len(dets), dtype=bool)
        for img, idxs in by_image_det.items():
            idxs = sorted(idxs, key=lambda i: rank[i])
            matched = greedy_match([dets[i] for i in idxs], by_image_gt.get(img, []), t)
            flags[idxs] = matched
        ap, prec, rec = _pr_curve(flags[order], len(gts))
        curves.append(ThresholdCurve(t, ap, prec, rec))
    aps = [c.ap for c in curves]
    return EvalResult(
        ap=float(np.mean(aps)),
        ap50=aps[IOU_THRESHOLDS.index(0.5)],
        ap75=aps[IOU_THRESHOLDS.index(0.75)],
        curves=curves,
    )

"""Conversions between pixel-level maps and instance-level boxes."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyGt, FlatMapWarning, KOutOfRange
from .hsicube import Annotation, BBox, BinaryMask, Detection, ScoreMap

__all__ = [
    "ComponentLabeling",
    "label_components",
    "mask_to_objects",
    "rasterize",
    "minmax_normalize",
    "scores_to_detections",
    "threshold_grid",
    "seg_iou_curve",
    "best_seg_threshold",
    "best_seg_threshold_pooled",
    "select_topk_mask",
]

_STRUCTURE = {
    8: np.ones((3, 3), dtype=bool),
    4: ndimage.generate_binary_structure(2, 1),
}


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    labels: np.ndarray
    count: int


def label_components(bits, connectivity: int = 8) -> ComponentLabeling:
    """Maximal connected components, ids 1..count in raster order of first pixel."""
    if connectivity not in _STRUCTURE:
        raise ValueError("connectivity must be 4 or 8")
    labels, count = ndimage.label(np.asarray(bits, dtype=bool), structure=_STRUCTURE[connectivity])
    return ComponentLabeling(labels, int(count))


def _component_boxes(labeling: ComponentLabeling) -> list[BBox]:
    boxes = []
    for sl in ndimage.find_objects(labeling.labels):
        rows, cols = sl
        boxes.append(BBox.from_xyxy(cols.start, rows.start, cols.stop, rows.stop))
    return boxes


def mask_to_objects(mask: BinaryMask, connectivity: int = 8, image_id: int = 0) -> list[Annotation]:
    """One tight box per connected component of ``mask``."""
    lab = label_components(mask.bits, connectivity)
    return [
        Annotation(box, mask.class_id, i + 1, image_id)
        for i, box in enumerate(_component_boxes(lab))
    ]


def rasterize(boxes: Sequence[BBox], height: int, width: int, class_id: int = 0) -> BinaryMask:
    """Fill each box's pixels.  Boxes are assumed pixel-aligned."""
    bits = np.zeros((height, width), dtype=bool)
    for b in boxes:
        x0, y0, x1, y1 = (int(round(v)) for v in b.xyxy())
        bits[max(y0, 0):min(y1, height), max(x0, 0):min(x1, width)] = True
    return BinaryMask(bits, class_id)


def minmax_normalize(scores) -> tuple[np.ndarray, bool]:
    """Scale to [0, 1].  Returns ``(normalized, flat)``; flat maps become zeros."""
    s = np.asarray(scores, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s), True
    return (s - lo) / (hi - lo), False


def scores_to_detections(smap: ScoreMap, threshold: float, connectivity: int = 8,
                         image_id: int = 0) -> list[Detection]:
    """Binarize the normalized map at ``threshold`` and box each component.

    Confidence is the maximum normalized score inside the component.  A flat
    map yields no detections and a :class:`FlatMapWarning`.
    """
    norm, flat = minmax_normalize(smap.scores)
    if flat:
        warnings.warn("flat score map: no detections produced", FlatMapWarning, stacklevel=2)
        return []
    lab = label_components(norm >= threshold, connectivity)
    if lab.count == 0:
        return []
    peaks = ndimage.maximum(norm, labels=lab.labels, index=np.arange(1, lab.count + 1))
    return [
        Detection(box, smap.class_id, float(min(max(p, 0.0), 1.0)), image_id)
        for box, p in zip(_component_boxes(lab), np.atleast_1d(peaks))
    ]


def threshold_grid() -> np.ndarray:
    """0.00, 0.01, ..., 1.00 as correctly rounded doubles."""
    return np.arange(101) / 100.0


def seg_iou_curve(smap: ScoreMap, gt: BinaryMask) -> tuple[np.ndarray, np.ndarray]:
    """Intersection and union pixel counts at every grid threshold."""
    if smap.scores.shape != gt.bits.shape:
        raise ValueError("score map and mask shapes differ")
    norm, _ = minmax_normalize(smap.scores)
    t = threshold_grid()
    g = gt.bits.ravel()
    pred = norm.ravel()[None, :] >= t[:, None]
    inter = (pred & g).sum(axis=1)
    union = (pred | g).sum(axis=1)
    return inter, union


def _pick_best(inter, union):
    iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    best = iou.max()
    # ties go to the larger threshold
    idx = int(np.flatnonzero(iou == best)[-1])
    return float(threshold_grid()[idx]), float(best)


def best_seg_threshold(smap: ScoreMap, gt: BinaryMask) -> tuple[float, float]:
    """Grid threshold maximizing pixel IoU against ``gt``; returns ``(t, iou)``."""
    if not gt.bits.any():
        raise EmptyGt("ground-truth mask has no positive pixel")
    return _pick_best(*seg_iou_curve(smap, gt))


def best_seg_threshold_pooled(maps: Sequence[ScoreMap], gts: Sequence[BinaryMask]) -> tuple[float, float]:
    """Per-image normalization, then IoU pooled over all images at each threshold."""
    if len(maps) != len(gts):
        raise ValueError("need one mask per score map")
    if not any(g.bits.any() for g in gts):
        raise EmptyGt("no positive pixel in any ground-truth mask")
    inter = np.zeros(101, dtype=np.int64)
    union = np.zeros(101, dtype=np.int64)
    for m, g in zip(maps, gts):
        i, u = seg_iou_curve(m, g)
        inter += i
        union += u
    return _pick_best(inter, union)


def select_topk_mask(smap: ScoreMap, k: int) -> BinaryMask:
    """Exactly ``k`` true pixels at the highest scores; ties in row-major order."""
    n = smap.scores.size
    if not 1 <= k <= n:
        raise KOutOfRange(f"k must lie in [1, {n}], got {k}")
    order = np.argsort(-smap.scores.ravel().astype(np.float64), kind="stable")
    bits = np.zeros(n, dtype=bool)
    bits[order[:k]] = True
    return BinaryMask(bits.reshape(smap.scores.shape), smap.class_id)

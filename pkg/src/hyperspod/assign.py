"""Set-prediction machinery: box overlap, matching costs, the hybrid one-to-many
assigner, denoising-query generators, loss terms and NMS.

Boxes are ``(cx, cy, w, h)`` rows.  Any consistent unit works; the
assigner and generators use coordinates normalized by image size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import Infeasible
from .hsicube import BBox, Detection

__all__ = [
    "LossWeights",
    "AssignResult",
    "NoisedQuery",
    "to_xyxy",
    "box_iou",
    "generalized_box_iou",
    "giou",
    "focal_cls_cost",
    "l1_cost",
    "combined_cost",
    "hungarian",
    "hybrid_assign",
    "ccdn_generate",
    "cdn_generate",
    "focal_loss",
    "set_loss",
    "nms_indices",
    "nms",
]

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
MIN_SIZE = 1e-4
CLAMP_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    l1: float = 5.0
    giou: float = 2.0

    def __post_init__(self):
        if min(self.cls, self.l1, self.giou) < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def unweighted(cls) -> "LossWeights":
        return cls(1.0, 1.0, 1.0)


@dataclass(frozen=True)
class AssignResult:
    pairs: tuple[tuple[int, int], ...]
    origins: tuple[str, ...]

    def positives_per_gt(self, n_gt: int) -> np.ndarray:
        counts = np.zeros(n_gt, dtype=np.int64)
        for g, _ in self.pairs:
            counts[g] += 1
        return counts

    def to_json(self) -> dict:
        return {"pairs": [{"gt": g, "pred": p, "origin": o} for (g, p), o in zip(self.pairs, self.origins)]}


@dataclass(frozen=True)
class NoisedQuery:
    box: BBox
    polarity: str
    gt_index: int
    group: int


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def to_xyxy(boxes) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    half = b[:, 2:] / 2
    return np.concatenate([b[:, :2] - half, b[:, :2] + half], axis=1)


def _pairwise(a, b):
    a, b = to_xyxy(a), to_xyxy(b)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    inter = np.clip(rb - lt, 0, None).prod(-1)
    area_a = (a[:, 2:] - a[:, :2]).prod(-1)
    area_b = (b[:, 2:] - b[:, :2]).prod(-1)
    union = area_a[:, None] + area_b[None, :] - inter
    return a, b, inter, union


def box_iou(a, b) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    _, _, inter, union = _pairwise(a, b)
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def generalized_box_iou(a, b) -> np.ndarray:
    """Pairwise GIoU = IoU - (enclosing area - union) / enclosing area."""
    xa, xb, inter, union = _pairwise(a, b)
    iou = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    lt = np.minimum(xa[:, None, :2], xb[None, :, :2])
    rb = np.maximum(xa[:, None, 2:], xb[None, :, 2:])
    hull = (rb - lt).prod(-1)
    return iou - np.divide(hull - union, hull, out=np.zeros_like(hull), where=hull > 0)


def _as_row(box) -> np.ndarray:
    return box.as_array() if isinstance(box, BBox) else np.asarray(box, dtype=np.float64)


def giou(a, b) -> float:
    return float(generalized_box_iou(_as_row(a), _as_row(b))[0, 0])


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------


def focal_cls_cost(pred_scores, gt_class, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA):
    """``-alpha (1-p)^gamma log p`` for the gt class probability ``p``.

    ``pred_scores`` is ``(..., n_cls)``; ``gt_class`` an int or an index array
    (then the result is ``(P, G)``).
    """
    s = np.asarray(pred_scores, dtype=np.float64)
    p = np.clip(s[..., np.asarray(gt_class)], 1e-12, 1.0)
    return -alpha * (1.0 - p) ** gamma * np.log(p)


def l1_cost(pred_box, gt_box):
    """Sum of absolute coordinate differences; pairwise when both are 2-D."""
    p = np.asarray(_as_row(pred_box), dtype=np.float64)
    g = np.asarray(_as_row(gt_box), dtype=np.float64)
    if p.ndim == 2 and g.ndim == 2:
        return np.abs(p[:, None, :] - g[None, :, :]).sum(-1)
    return float(np.abs(p - g).sum())


def combined_cost(pred_boxes, pred_scores, gt_boxes, gt_classes, weights: LossWeights) -> np.ndarray:
    """``(G, P)`` matching cost ``w_cls*focal + w_l1*L1 + w_giou*(1 - GIoU)``."""
    cls = focal_cls_cost(pred_scores, np.asarray(gt_classes, dtype=np.int64))     # (P, G)
    l1 = l1_cost(np.atleast_2d(pred_boxes), np.atleast_2d(gt_boxes))             # (P, G)
    g = 1.0 - generalized_box_iou(pred_boxes, gt_boxes)                          # (P, G)
    return (weights.cls * cls + weights.l1 * l1 + weights.giou * g).T


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment of every row (gt) to a distinct column (pred)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    g, p = cost.shape
    if g > p:
        raise Infeasible(f"{g} ground truths cannot be matched to {p} predictions")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def hybrid_assign(gt_boxes, gt_classes, pred_boxes, pred_scores, weights: LossWeights | None = None,
                  tau_iou: float = 0.95, t_cap: int = 9) -> AssignResult:
    """Forced Hungarian matching, then up to ``t_cap`` extra positives per gt.

    A prediction is a dynamic candidate only for the gt it overlaps most
    (lowest gt index on ties), only when that IoU exceeds ``tau_iou``, and
    never if it was already force-matched.  This keeps prediction indices
    unique across all pairs.
    """
    weights = weights or LossWeights.unweighted()
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    if gt_boxes.shape[0] == 0:
        return AssignResult((), ())
    forced = hungarian(combined_cost(pred_boxes, pred_scores, gt_boxes, gt_classes, weights))
    pairs = list(forced)
    origins = ["forced"] * len(forced)
    taken = {p for _, p in forced}
    iou = box_iou(gt_boxes, pred_boxes)                      # (G, P)
    owner = np.argmax(iou, axis=0)
    for g in range(gt_boxes.shape[0]):
        cand = [p for p in np.flatnonzero((owner == g) & (iou[g] > tau_iou)) if p not in taken]
        cand.sort(key=lambda p: (-iou[g, p], p))
        for p in cand[:t_cap]:
            pairs.append((g, int(p)))
            origins.append("dynamic")
    return AssignResult(tuple(pairs), tuple(origins))


# ---------------------------------------------------------------------------
# Denoising queries
# ---------------------------------------------------------------------------


def _clamp_box(cx, cy, w, h) -> BBox:
    w = float(np.clip(w, MIN_SIZE, 1.0))
    h = float(np.clip(h, MIN_SIZE, 1.0))
    cx = float(np.clip(cx, CLAMP_EPS, 1 - CLAMP_EPS))
    cy = float(np.clip(cy, CLAMP_EPS, 1 - CLAMP_EPS))
    return BBox(cx, cy, w, h)


def ccdn_generate(gt_boxes, tau1: float = 0.5, tau2: float = 1.5, n_pairs: int = 200,
                  rng: np.random.Generator | None = None, tries: int = 10) -> list[NoisedQuery]:
    """Centre-and-scale noised positive/negative queries for every gt, ``n_pairs`` times.

    Positives shift the centre by less than ``0.5*tau1`` of the box size on
    each axis; negatives by ``[0.5*tau1, tau1]`` of it on both axes.  Sizes
    are drawn from ``[max(1e-4, w - tau2*w), w + tau2*w]``.  A negative whose
    centre would leave ``(0, 1)`` is redrawn up to ``tries`` times; after
    that each offset points away from the nearer border, then the box is
    clamped.
    """
    if not (tau1 > 0 and tau2 > 0):
        raise ValueError("tau1 and tau2 must be positive")
    rng = rng or np.random.default_rng()
    gts = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    out: list[NoisedQuery] = []

    def size(v):
        return rng.uniform(max(MIN_SIZE, v - tau2 * v), v + tau2 * v)

    for grp in range(n_pairs):
        for gi, (cx, cy, w, h) in enumerate(gts):
            nx = rng.uniform(-0.5 * tau1 * w, 0.5 * tau1 * w)
            ny = rng.uniform(-0.5 * tau1 * h, 0.5 * tau1 * h)
            out.append(NoisedQuery(_clamp_box(cx + nx, cy + ny, size(w), size(h)), "positive", gi, grp))

            for _ in range(tries):
                nx = rng.choice([-1.0, 1.0]) * rng.uniform(0.5 * tau1 * w, tau1 * w)
                ny = rng.choice([-1.0, 1.0]) * rng.uniform(0.5 * tau1 * h, tau1 * h)
                if 0 < cx + nx < 1 and 0 < cy + ny < 1:
                    break
            else:
                nx = abs(nx) if cx < 0.5 else -abs(nx)
                ny = abs(ny) if cy < 0.5 else -abs(ny)
            out.append(NoisedQuery(_clamp_box(cx + nx, cy + ny, size(w), size(h)), "negative", gi, grp))
    return out


def cdn_generate(gt_boxes, lambda1: float = 1.0, lambda2: float = 2.0, n_pairs: int = 200,
                 rng: np.random.Generator | None = None) -> list[NoisedQuery]:
    """Corner-noise reference generator for comparison runs.

    Each corner moves by ``u * (w/2, h/2)`` with ``|u| < lambda1`` for
    positives and ``lambda1 <= |u| < lambda2`` for negatives.
    """
    rng = rng or np.random.default_rng()
    gts = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    out: list[NoisedQuery] = []
    for grp in range(n_pairs):
        for gi, row in enumerate(gts):
            x0, y0, x1, y1 = to_xyxy(row)[0]
            half = np.array([row[2], row[3], row[2], row[3]]) / 2
            for polarity, lo, hi in (("positive", 0.0, lambda1), ("negative", lambda1, lambda2)):
                u = rng.choice([-1.0, 1.0], 4) * rng.uniform(lo, hi, 4)
                c = np.array([x0, y0, x1, y1]) + u * half
                c = np.clip(c, 0.0, 1.0)
                bx0, bx1 = sorted((c[0], c[2]))
                by0, by1 = sorted((c[1], c[3]))
                out.append(NoisedQuery(
                    _clamp_box((bx0 + bx1) / 2, (by0 + by1) / 2, bx1 - bx0, by1 - by0), polarity, gi, grp))
    return out


# ---------------------------------------------------------------------------
# Losses (forward values only)
# ---------------------------------------------------------------------------


def focal_loss(pred_scores, targets, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> float:
    """Sigmoid focal loss summed over all entries; ``targets`` is a 0/1 array."""
    p = np.clip(np.asarray(pred_scores, dtype=np.float64), 1e-12, 1 - 1e-12)
    t = np.asarray(targets, dtype=np.float64)
    pos = -alpha * (1 - p) ** gamma * np.log(p)
    neg = -(1 - alpha) * p**gamma * np.log(1 - p)
    return float((t * pos + (1 - t) * neg).sum())


def set_loss(gt_boxes, gt_classes, pred_boxes, pred_scores, result: AssignResult,
             weights: LossWeights = LossWeights()) -> dict[str, float]:
    """Weighted classification, L1 and GIoU losses, normalized by the gt count."""
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(pred_scores, dtype=np.float64)
    n = max(gt_boxes.shape[0], 1)
    targets = np.zeros_like(scores)
    l1 = gl = 0.0
    for g, p in result.pairs:
        targets[p, int(gt_classes[g])] = 1.0
        l1 += float(np.abs(pred_boxes[p] - gt_boxes[g]).sum())
        gl += 1.0 - giou(pred_boxes[p], gt_boxes[g])
    parts = {"cls": focal_loss(scores, targets) / n, "l1": l1 / n, "giou": gl / n}
    parts["total"] = weights.cls * parts["cls"] + weights.l1 * parts["l1"] + weights.giou * parts["giou"]
    return parts


# ---------------------------------------------------------------------------
# NMS
# ---------------------------------------------------------------------------


def nms_indices(boxes, scores, iou_thresh: float) -> np.ndarray:
    """Greedy NMS; returns kept indices by descending score, ties by index."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    iou = box_iou(boxes, boxes)
    suppressed = np.zeros(len(order), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= iou[i] > iou_thresh
    return np.array(keep, dtype=np.int64)


def nms(dets: Sequence[Detection], iou_thresh: float = 0.01, class_aware: bool = True) -> list[Detection]:
    """Suppress boxes overlapping a more confident kept box by more than ``iou_thresh``."""
    dets = list(dets)
    if not dets:
        return []
    boxes = np.array([d.box.as_array() for d in dets])
    scores = np.array([d.confidence for d in dets])
    if not class_aware:
        return [dets[i] for i in nms_indices(boxes, scores, iou_thresh)]
    keep = []
    for cls in sorted({(d.image_id, d.class_id) for d in dets}):
        idx = np.array([i for i, d in enumerate(dets) if (d.image_id, d.class_id) == cls])
        keep.extend(idx[nms_indices(boxes[idx], scores[idx], iou_thresh)].tolist())
    keep.sort(key=lambda i: (-scores[i], i))
    return [dets[i] for i in keep]

"""Instance- and pixel-level evaluation.

Instance metrics follow the COCO recipe: per image and class keep the
``max_dets`` most confident detections, match greedily in descending
confidence (each detection takes the unmatched same-class gt with the
highest IoU strictly above the threshold), pool over images, and take AP as
the mean of the interpolated precision at 101 recall points.  Classes with
no ground truth anywhere are left out of every mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .annotate import minmax_normalize, seg_iou_curve
from .assign import box_iou
from .errors import DegenerateGt, NoGtForClass, ZeroVarianceBand
from .hsicube import Annotation, BBox, BinaryMask, Detection, HyperCube, ScoreMap

__all__ = [
    "EvalConfig",
    "EvalReport",
    "COCO_GRID",
    "SNR_GRID_DB",
    "match_detections",
    "average_precision",
    "interpolated_ap",
    "exact_ap",
    "evaluate",
    "fixed_threshold_pr",
    "roc_auc",
    "pixel_metrics",
    "inject_noise",
    "measured_snr_db",
]

COCO_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
SNR_GRID_DB = (10, 15, 20, 25, 30, 35)
CRITERIA = ("coco", "fixed_iou", "inner_outer")


@dataclass(frozen=True)
class EvalConfig:
    iou_grid: tuple[float, ...] = COCO_GRID
    extra_iou: tuple[float, ...] = (0.25,)
    max_dets: int | None = 100
    criterion: str = "coco"
    fixed_iou: float = 0.25
    inner: float = 5.0
    outer: float = 9.0

    def __post_init__(self):
        if list(self.iou_grid) != sorted(self.iou_grid) or not self.iou_grid:
            raise ValueError("iou_grid must be non-empty and ascending")
        if self.max_dets is not None and self.max_dets < 1:
            raise ValueError("max_dets must be >= 1 (or None to keep all)")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if not 0 < self.inner < self.outer:
            raise ValueError("need 0 < inner < outer")


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


def _inner_outer_ok(det: BBox, gt: BBox, inner: float, outer: float) -> bool:
    dx0, dy0, dx1, dy1 = det.xyxy()
    hi, ho = inner / 2, outer / 2
    overlaps = min(dx1, gt.cx + hi) > max(dx0, gt.cx - hi) and min(dy1, gt.cy + hi) > max(dy0, gt.cy - hi)
    inside = dx0 >= gt.cx - ho and dx1 <= gt.cx + ho and dy0 >= gt.cy - ho and dy1 <= gt.cy + ho
    return overlaps and inside


def match_detections(dets: Sequence[Detection], gts: Sequence[Annotation], iou_thresh: float = 0.5,
                     criterion: str = "iou", inner: float = 5.0, outer: float = 9.0):
    """Greedy matching within one image.

    Returns ``(order, tp, gt_of)``: detection indices by descending
    confidence (ties keep input order), a TP flag per ranked detection, and
    the matched gt index (or -1).  Under ``criterion="inner_outer"`` a pair
    qualifies when the detection overlaps the gt-centred ``inner`` square and
    lies within the ``outer`` square; IoU still orders the candidates.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    tp = np.zeros(len(order), dtype=bool)
    gt_of = np.full(len(order), -1, dtype=np.int64)
    if not gts or not dets:
        return order, tp, gt_of
    iou = box_iou([dets[i].box.as_array() for i in order], [g.box.as_array() for g in gts])
    used = np.zeros(len(gts), dtype=bool)
    for r, i in enumerate(order):
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if used[j] or g.class_id != dets[i].class_id:
                continue
            if criterion == "inner_outer":
                ok = _inner_outer_ok(dets[i].box, g.box, inner, outer)
            else:
                ok = iou[r, j] > iou_thresh
            if ok and iou[r, j] > best_iou:
                best, best_iou = j, iou[r, j]
        if best >= 0:
            used[best] = True
            tp[r] = True
            gt_of[r] = best
    return order, tp, gt_of


# ---------------------------------------------------------------------------
# AP
# ---------------------------------------------------------------------------


def _pr_curve(conf, tp, n_gt):
    order = np.argsort(-np.asarray(conf, dtype=np.float64), kind="mergesort")
    tp = np.asarray(tp, dtype=np.float64)[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).tiny)
    return recall, precision


def interpolated_ap(recall, precision, points: int = 101) -> float:
    """Mean over ``points`` recall levels of the best precision at recall >= level."""
    recall = np.asarray(recall, dtype=np.float64)
    if recall.size == 0:
        return 0.0
    env = np.maximum.accumulate(np.asarray(precision, dtype=np.float64)[::-1])[::-1]
    levels = np.linspace(0.0, 1.0, points)
    idx = np.searchsorted(recall, levels, side="left")
    q = np.where(idx < recall.size, env[np.minimum(idx, recall.size - 1)], 0.0)
    return float(q.mean())


def exact_ap(recall, precision) -> float:
    """Area under the interpolated (monotone envelope) PR step curve."""
    recall = np.asarray(recall, dtype=np.float64)
    if recall.size == 0:
        return 0.0
    env = np.maximum.accumulate(np.asarray(precision, dtype=np.float64)[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float((steps * env).sum())


def _collect(dets_by_image, gts_by_image, class_id, thr, cfg: EvalConfig, criterion):
    conf, tp = [], []
    n_gt = 0
    for img in sorted(set(dets_by_image) | set(gts_by_image)):
        g = [a for a in gts_by_image.get(img, []) if a.class_id == class_id]
        d = [x for x in dets_by_image.get(img, []) if x.class_id == class_id]
        d = sorted(d, key=lambda x: -x.confidence)
        if cfg.max_dets is not None:
            d = d[:cfg.max_dets]
        n_gt += len(g)
        order, flags, _ = match_detections(d, g, thr, criterion, cfg.inner, cfg.outer)
        conf.extend(d[i].confidence for i in order)
        tp.extend(flags.tolist())
    return np.array(conf), np.array(tp, dtype=bool), n_gt


def average_precision(dets_by_image, gts_by_image, class_id: int, iou_thresh: float,
                      cfg: EvalConfig = EvalConfig(), criterion: str = "iou") -> tuple[float, float]:
    """``(AP, recall)`` for one class at one threshold over a dataset."""
    conf, tp, n_gt = _collect(dets_by_image, gts_by_image, class_id, iou_thresh, cfg, criterion)
    if n_gt == 0:
        raise NoGtForClass(f"class {class_id} has no ground truth")
    recall, precision = _pr_curve(conf, tp, n_gt)
    return interpolated_ap(recall, precision), float(tp.sum() / n_gt)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    per_class: dict[int, dict] = field(default_factory=dict)
    summary: dict[str, float] = field(default_factory=dict)
    class_names: dict[int, str] = field(default_factory=dict)
    criterion: str = "coco"
    skipped_classes: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "criterion": self.criterion,
            "summary": self.summary,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "class_names": {str(k): v for k, v in sorted(self.class_names.items())},
            "skipped_classes": self.skipped_classes,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls({int(k): v for k, v in d["per_class"].items()}, d["summary"],
                   {int(k): v for k, v in d.get("class_names", {}).items()}, d["criterion"],
                   d.get("skipped_classes", []))

    def to_markdown(self) -> str:
        ids = sorted(self.per_class)
        names = [self.class_names.get(i, f"C{i + 1}") for i in ids]
        lines = []
        head = ["Metric"] + names + list(self.summary)
        lines.append("| " + " | ".join(head) + " |")
        lines.append("|" + "---|" * len(head))
        lines.append("| AP | " + " | ".join(f"{self.per_class[i]['ap']:.3f}" for i in ids) + " | "
                     + " | ".join(f"{v:.3f}" for v in self.summary.values()) + " |")
        for key, label in (("ap25", "AP25"), ("ar", "AR"), ("re25", "Re25"), ("auc", "AUC"), ("seg_iou", "IoU")):
            if all(key in self.per_class[i] for i in ids) and ids:
                lines.append(f"| {label} | " + " | ".join(f"{self.per_class[i][key]:.3f}" for i in ids)
                             + " |" + " |" * len(self.summary))
        return "\n".join(lines) + "\n"


def _group(items):
    out: dict[int, list] = {}
    for it in items:
        out.setdefault(it.image_id, []).append(it)
    return out


def evaluate(dets: Sequence[Detection], gts: Sequence[Annotation], cfg: EvalConfig = EvalConfig(),
             class_names: Mapping[int, str] | None = None, class_ids: Sequence[int] | None = None) -> EvalReport:
    """Dataset-level AP/AR over the IoU grid plus the extra thresholds.

    Summary keys: ``mAP``, ``mAR``, ``mAP25``, ``mRe25`` (the latter two from
    the first extra threshold), and ``mAP_crit``/``mRe_crit`` when the
    criterion is not ``coco``.
    """
    dmap, gmap = _group(dets), _group(gts)
    ids = sorted(set(class_ids) if class_ids is not None else {a.class_id for a in gts} | {d.class_id for d in dets})
    report = EvalReport(class_names=dict(class_names or {}), criterion=cfg.criterion)
    extra = cfg.extra_iou[0] if cfg.extra_iou else None
    for c in ids:
        try:
            grid = [average_precision(dmap, gmap, c, t, cfg) for t in cfg.iou_grid]
        except NoGtForClass:
            report.skipped_classes.append(c)
            continue
        entry = {
            "ap": float(np.mean([a for a, _ in grid])),
            "ar": float(np.mean([r for _, r in grid])),
            "ap_by_iou": {f"{t:.2f}": a for t, (a, _) in zip(cfg.iou_grid, grid)},
            "recall_by_iou": {f"{t:.2f}": r for t, (_, r) in zip(cfg.iou_grid, grid)},
        }
        if extra is not None:
            entry["ap25"], entry["re25"] = average_precision(dmap, gmap, c, extra, cfg)
        if cfg.criterion == "fixed_iou":
            entry["ap_crit"], entry["re_crit"] = average_precision(dmap, gmap, c, cfg.fixed_iou, cfg)
        elif cfg.criterion == "inner_outer":
            entry["ap_crit"], entry["re_crit"] = average_precision(dmap, gmap, c, 0.0, cfg, "inner_outer")
        report.per_class[c] = entry

    def mean(key):
        vals = [v[key] for v in report.per_class.values() if key in v]
        return float(np.mean(vals)) if vals else 0.0

    report.summary = {"mAP": mean("ap"), "mAP25": mean("ap25"), "mAR": mean("ar"), "mRe25": mean("re25")}
    if cfg.criterion != "coco":
        report.summary["mAP_crit"] = mean("ap_crit")
        report.summary["mRe_crit"] = mean("re_crit")
    return report


def fixed_threshold_pr(dets: Sequence[Detection], gts: Sequence[Annotation], thresholds: Sequence[float],
                       iou_thresh: float = 0.5, criterion: str = "iou", inner: float = 5.0,
                       outer: float = 9.0) -> list[dict]:
    """Num, TP, precision and recall of the detections whose confidence is ``>= t``.

    When nothing passes, precision is reported as 0 with ``pr_defined`` False.
    """
    dmap, gmap = _group(dets), _group(gts)
    n_gt = len(gts)
    rows = []
    for t in thresholds:
        num = tp = 0
        for img in sorted(set(dmap) | set(gmap)):
            d = [x for x in dmap.get(img, []) if x.confidence >= t]
            num += len(d)
            _, flags, _ = match_detections(d, gmap.get(img, []), iou_thresh, criterion, inner, outer)
            tp += int(flags.sum())
        rows.append({
            "threshold": float(t), "num": num, "tp": tp,
            "pr": tp / num if num else 0.0, "pr_defined": num > 0,
            "re": tp / n_gt if n_gt else 0.0,
        })
    return rows


# ---------------------------------------------------------------------------
# Pixel-level metrics
# ---------------------------------------------------------------------------


def roc_auc(smap: ScoreMap | np.ndarray, gt: BinaryMask | np.ndarray) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties averaged)."""
    s = np.asarray(smap.scores if isinstance(smap, ScoreMap) else smap, dtype=np.float64).ravel()
    g = np.asarray(gt.bits if isinstance(gt, BinaryMask) else gt, dtype=bool).ravel()
    if s.shape != g.shape:
        raise ValueError("score map and mask sizes differ")
    n_pos = int(g.sum())
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateGt("AUC needs at least one positive and one negative pixel")
    ranks = rankdata(s)
    return float((ranks[g].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def pixel_metrics(maps: Sequence[ScoreMap], masks: Sequence[BinaryMask]) -> dict[int, dict]:
    """Per-class AUC and segmentation IoU at the best pooled threshold.

    Each map is min-max normalized within its own image; pixels of all
    images of a class are then pooled.
    """
    by_class: dict[int, tuple[list, list]] = {}
    for m, g in zip(maps, masks):
        if m.class_id != g.class_id:
            raise ValueError("score map and mask class ids differ")
        by_class.setdefault(m.class_id, ([], []))
        by_class[m.class_id][0].append(m)
        by_class[m.class_id][1].append(g)
    out = {}
    for c, (ms, gs) in sorted(by_class.items()):
        norm = np.concatenate([minmax_normalize(m.scores)[0].ravel() for m in ms])
        bits = np.concatenate([g.bits.ravel() for g in gs])
        if not bits.any() or bits.all():
            continue
        inter = np.zeros(101, dtype=np.int64)
        union = np.zeros(101, dtype=np.int64)
        for m, g in zip(ms, gs):
            i, u = seg_iou_curve(m, g)
            inter += i
            union += u
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
        best = int(np.flatnonzero(iou == iou.max())[-1])
        out[c] = {"auc": roc_auc(norm, bits), "seg_iou": float(iou[best]), "threshold": best / 100.0}
    return out


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def inject_noise(cube: HyperCube, snr_db: float, rng: np.random.Generator | None = None,
                 calibrated: bool = False) -> HyperCube:
    """Add zero-mean Gaussian noise with per-band variance ``var_i / 10^(snr/10)``.

    ``var_i`` is the population variance of band ``i``.  With
    ``calibrated=True`` each band's draw is centred and rescaled so the
    realized noise variance equals the target exactly; otherwise the draws
    are i.i.d. and the realized SNR scatters by roughly
    ``4.34 * sqrt(2 / (H*W))`` dB.  ``snr_db = inf`` returns the cube
    unchanged.  A reflectance cube whose noisy values leave ``[0, 1.05]``
    raises ``ValueError``.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return cube
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    rng = rng or np.random.default_rng()
    x = cube.pixels()
    var = x.var(axis=0)
    bad = np.flatnonzero(var <= 0)
    if bad.size:
        raise ZeroVarianceBand(f"band(s) {bad.tolist()} have zero variance")
    sigma = np.sqrt(var / 10.0 ** (snr_db / 10.0))
    z = rng.standard_normal(x.shape)
    if calibrated:
        z = (z - z.mean(axis=0)) / z.std(axis=0)
    noisy = x + z * sigma
    return cube.replace(noisy.reshape(cube.data.shape).astype(np.float32))


def measured_snr_db(clean: HyperCube, noisy: HyperCube) -> np.ndarray:
    """Per-band ``10 log10(var(clean) / var(noisy - clean))``."""
    x = clean.pixels()
    n = noisy.pixels() - x
    return 10.0 * np.log10(x.var(axis=0) / n.var(axis=0))

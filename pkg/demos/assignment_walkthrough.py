"""Hybrid one-to-one plus dynamic one-to-many matching on a toy scene.

Two ground-truth boxes, a cloud of predictions around each. The forced pairs
come from the Hungarian solve; extra high-IoU predictions join as dynamic
pairs, capped per object.

    python demos/assignment_walkthrough.py
"""

import numpy as np

from hyperspod.assign import box_iou, ccdn_generate, hybrid_assign

rng = np.random.default_rng(0)
gts = np.array([[0.30, 0.30, 0.06, 0.06], [0.70, 0.60, 0.04, 0.08]])
preds = np.concatenate([g + rng.normal(0, [0.0008, 0.0008, 0.0004, 0.0004], (8, 4)) for g in gts])
preds = np.concatenate([preds, rng.uniform(0.05, 0.95, (6, 4)) * [1, 1, 0.1, 0.1]])
scores = rng.uniform(0, 1, (len(preds), 2))

res = hybrid_assign(gts, np.array([0, 1]), preds, scores, tau_iou=0.95, t_cap=3)
iou = box_iou(gts, preds)
print("gt  pred  origin    IoU")
for (g, p), origin in zip(res.pairs, res.origins):
    print(f"{g:2d}  {p:4d}  {origin:8s}  {iou[g, p]:.3f}")

# contrastive denoising queries: positives hug the object, negatives sit in a ring
qs = ccdn_generate(gts, tau1=0.5, tau2=1.5, n_pairs=3, rng=rng)
for q in qs[:6]:
    off = abs(q.box.cx - gts[q.gt_index, 0]) / gts[q.gt_index, 2]
    print(f"gt {q.gt_index} {q.polarity:8s} centre offset {off:.3f} of width")
